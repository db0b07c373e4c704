"""Hybrid switching policies, closed-loop simulation and trace monitoring."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .automata import TOP, Automaton, PartitionKey, SwitchingAutomaton, build_switching_automaton, state_name
from .system import InterconnectedSystem, LabelingFunction, step_interconnected


class PolicyError(ValueError):
    pass


@dataclass(eq=False)
class HybridPolicy:
    """Switching automaton plus one network controller per partition key.

    The input at state ``x`` is produced by the controller bound to the
    switching state reached after reading ``L(x)``; states without a bound
    controller use ``fallback``.
    """

    automaton: Automaton
    switching: SwitchingAutomaton
    controllers: dict
    fallback: Callable

    @classmethod
    def build(cls, automaton: Automaton, controllers: Mapping, fallback: Callable) -> "HybridPolicy":
        return cls(automaton, build_switching_automaton(automaton), dict(controllers), fallback)

    def controller_for(self, qm):
        key = SwitchingAutomaton.key_of(qm)
        return self.controllers.get(key) if key is not None else None

    def initial_state(self):
        return self.switching.initial[0]


def policy_step(p: HybridPolicy, labeling: LabelingFunction, x, qm):
    """Return ``(u, qm_next)`` for state ``x`` and current switching state ``qm``."""
    label = labeling.label(x)
    nxt = p.switching.step(qm, label)
    if nxt is None:
        raise PolicyError(f"no switching transition from {state_name(p.automaton, qm)} on label {label!r}")
    ctrl = p.controller_for(nxt)
    u = (ctrl if ctrl is not None else p.fallback)(np.asarray(x, dtype=float))
    return u, nxt


@dataclass
class Trace:
    states: np.ndarray
    inputs: np.ndarray
    switching_states: list
    labels: list
    barrier: np.ndarray | None = None
    fallback_steps: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.inputs)


def simulate(sys: InterconnectedSystem, p: HybridPolicy, labeling: LabelingFunction, x0, horizon: int,
             barrier_fn: Callable | None = None) -> Trace:
    """Synchronous closed-loop rollout.

    ``switching_states[0]`` is the initial pair and
    ``switching_states[k + 1] = delta_m(switching_states[k], labels[k])``;
    input ``k`` comes from the controller of ``switching_states[k + 1]``.
    """
    if horizon < 1:
        raise PolicyError("horizon must be at least 1")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.state_dim,):
        raise PolicyError(f"initial state must have shape ({sys.state_dim},)")
    states = np.empty((horizon + 1, sys.state_dim))
    inputs = np.empty((horizon, sys.input_dim))
    qms = [p.initial_state()]
    labels = []
    fallback_steps = []
    states[0] = x
    for k in range(horizon):
        u, qm = policy_step(p, labeling, x, qms[-1])
        labels.append(labeling.label(x))
        if p.controller_for(qm) is None:
            fallback_steps.append(k)
        qms.append(qm)
        inputs[k] = u
        x = step_interconnected(sys, x, u)
        states[k + 1] = x
    labels.append(labeling.label(x))
    barrier = barrier_fn(states) if barrier_fn is not None else None
    return Trace(states, inputs, qms, labels, barrier, fallback_steps)


@dataclass
class MonitorReport:
    """Finite-horizon evidence: visits of the complement automaton to its final states.

    ``passed`` means no final-state visit within the trace; it is a surrogate
    for the infinite-horizon acceptance condition, not a proof.
    """

    states: list
    final_visits: list
    blocked_at: int | None
    passed: bool

    def to_json(self) -> dict:
        return {"automaton_states": self.states, "final_visits": self.final_visits,
                "blocked_at": self.blocked_at, "passed": self.passed,
                "note": "finite-horizon surrogate: passed means no accepting-state visit of the complement automaton"}


def _advance(a: Automaton, q, label):
    if label == TOP:
        targets = {a.step(q, p) for p in a.alphabet}
        if len(targets) != 1:
            raise PolicyError(f"label '{TOP}' is ambiguous from state {q!r}")
        return targets.pop()
    if label not in a.alphabet:
        raise PolicyError(f"label {label!r} is not in the automaton alphabet")
    return a.step(q, label)


def monitor_trace(labels, a: Automaton) -> MonitorReport:
    """Run the complement automaton on the label sequence of a trace."""
    if isinstance(labels, Trace):
        labels = labels.labels
    if any(lab is None for lab in labels):
        raise PolicyError("trace contains an unlabeled state")
    q = a.initial[0]
    seq = [q]
    visits = [0] if q in a.final else []
    blocked = None
    for k, lab in enumerate(labels):
        q = _advance(a, q, lab)
        if q is None:
            blocked = k
            break
        seq.append(q)
        if q in a.final:
            visits.append(k + 1)
    return MonitorReport(seq, visits, blocked, not visits)


def envelope(t: Trace) -> tuple[np.ndarray, np.ndarray]:
    """Per-step minimum and maximum over all state coordinates."""
    return t.states.min(axis=1), t.states.max(axis=1)


def trace_csv(t: Trace, a: Automaton, full_state: bool = False) -> str:
    lo, hi = envelope(t)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["step", "q_m", "label", "min", "max"]
    if t.barrier is not None:
        header.append("barrier")
    if full_state:
        header += [f"x{i}" for i in range(t.states.shape[1])]
    w.writerow(header)
    for k in range(len(t.states)):
        row = [k, state_name(a, t.switching_states[k]), t.labels[k], repr(float(lo[k])), repr(float(hi[k]))]
        if t.barrier is not None:
            row.append(repr(float(t.barrier[k])))
        if full_state:
            row += [repr(float(v)) for v in t.states[k]]
        w.writerow(row)
    return buf.getvalue()


def envelope_csv(t: Trace) -> str:
    lo, hi = envelope(t)
    lines = ["step,min,max"]
    lines += [f"{k},{float(a)!r},{float(b)!r}" for k, (a, b) in enumerate(zip(lo, hi))]
    return "\n".join(lines) + "\n"
