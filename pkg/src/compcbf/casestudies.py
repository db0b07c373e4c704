"""Bundled automata and certificates for the room and oscillator networks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .automata import Automaton, PartitionKey, complement_to_buchi
from .barrier import ComposedCertificate, LocalCertificate, certificate_from_json, compose, eval_composed
from .controllers import ConstantController, NetworkController
from .policy import HybridPolicy
from .system import (InterconnectedSystem, LabelingFunction, build_kuramoto_network, build_room_network)

ROOM_KEY = PartitionKey("q0", "q1", frozenset({"q1", "q2"}))
KURAMOTO_KEY_X1 = PartitionKey("q0", "q1", frozenset({"q1", "q3"}))
KURAMOTO_KEY_X4 = PartitionKey("q0", "q2", frozenset({"q2", "q3"}))


def data_json(name: str):
    """Parsed JSON of a bundled data file."""
    return json.loads(resources.files("compcbf").joinpath("data").joinpath(name).read_text())


def bundled_automaton(name: str) -> Automaton:
    return Automaton.from_json(data_json(name))


def example1_automaton() -> Automaton:
    return bundled_automaton("example1.json")


@dataclass(eq=False)
class CaseStudy:
    system: InterconnectedSystem
    labeling: LabelingFunction
    specification: Automaton
    complement: Automaton
    certificates: dict
    policy: HybridPolicy

    def composed(self, key: PartitionKey) -> ComposedCertificate:
        """Composed certificate of the subsystem copies bound to ``key``."""
        cert = self.certificates[key]
        return compose([cert] * self.system.n, wiring=self.system.wiring())

    def barrier_fn(self, key: PartitionKey):
        composed = self.composed(key)
        return lambda xs: eval_composed(composed, xs)


def assemble_policy(sys: InterconnectedSystem, complement: Automaton, certificates: dict) -> HybridPolicy:
    """One network controller per key; the fallback applies every subsystem's default input.

    ``certificates`` maps a partition key to one shared certificate or to a
    list with one certificate per subsystem.
    """
    ctrls = {}
    for key, certs in certificates.items():
        if isinstance(certs, LocalCertificate):
            certs = [certs] * sys.n
        if any(c.controller is None for c in certs):
            continue
        shared = len({id(c) for c in certs}) == 1
        ctrls[key] = NetworkController(sys, certs[0].controller if shared else [c.controller for c in certs])
    fallback = NetworkController(sys, [ConstantController(s.inputs.default()) for s in sys.subsystems])
    return HybridPolicy.build(complement, ctrls, fallback)


def _case(sys, lab, dca_name: str, certs: dict) -> CaseStudy:
    spec = bundled_automaton(dca_name)
    comp = complement_to_buchi(spec)
    return CaseStudy(sys, lab, spec, comp, certs, assemble_policy(sys, comp, certs))


def room_case(n: int) -> CaseStudy:
    sys, lab = build_room_network(n)
    cert = certificate_from_json(data_json("rooms_cert.json"), sys.subsystems[0])
    return _case(sys, lab, "rooms_dca.json", {ROOM_KEY: cert})


def kuramoto_certificates(sys: InterconnectedSystem) -> dict:
    sub = sys.subsystems[0]
    return {KURAMOTO_KEY_X1: certificate_from_json(data_json("kuramoto_cert_x1.json"), sub),
            KURAMOTO_KEY_X4: certificate_from_json(data_json("kuramoto_cert_x4.json"), sub)}


def kuramoto_case(n: int) -> CaseStudy:
    sys, lab = build_kuramoto_network(n)
    return _case(sys, lab, "kuramoto_dca.json", kuramoto_certificates(sys))


def room_certificate() -> LocalCertificate:
    sys, _ = build_room_network(3)
    return certificate_from_json(data_json("rooms_cert.json"), sys.subsystems[0])


BUILDERS = {"rooms": room_case, "kuramoto": kuramoto_case}
