"""Command-line front end: decompose, check-smallgain, verify, synthesize, simulate.

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 synthesis failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import casestudies
from .automata import (BUCHI, COBUCHI, Automaton, AutomatonError, PartitionKey, all_triplets, build_partitions,
                       build_switching_automaton, complement_to_buchi, compute_run_fragments, extract_triplets,
                       group_by_initial_prop, merged_target_props, required_certificates, triplet_feasible,
                       bucket_feasible)
from .barrier import (GridSpec, LevelConditionError, VerificationError, certificate_from_json,
                      check_decrease_composed, compose, verify_local)
from .comparison import KFnError, SmallGainError, UnsupportedGainClass, check_small_gain, find_phi, gamma_matrix, kfn_to_json
from .policy import PolicyError, monitor_trace, simulate, trace_csv, envelope_csv
from .regions import Region
from .synthesis import (CegisConfig, SynthesisError, SynthesisRegions, Template, synthesize_cegis)
from .system import ModelError, labeling_from_json, network_state_region, subsystem_from_json, system_from_json

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SYNTH = 0, 1, 2, 3
BUNDLED = "bundled:"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class Project:
    """Resolved project configuration; paths are relative to the config file."""

    raw: dict
    base: Path
    out: Path
    seed: int = 0
    n: int | None = None
    horizon: int | None = None
    grid_resolution: float | None = None
    cache: dict = field(default_factory=dict)

    def read_json(self, ref):
        if isinstance(ref, dict) or isinstance(ref, list):
            return ref
        if not isinstance(ref, str):
            raise ConfigError(f"expected a file reference, got {ref!r}")
        if ref.startswith(BUNDLED):
            try:
                return casestudies.data_json(ref[len(BUNDLED):])
            except FileNotFoundError:
                raise ConfigError(f"no bundled file {ref!r}") from None
        path = (self.base / ref) if not Path(ref).is_absolute() else Path(ref)
        if not path.exists():
            raise ConfigError(f"referenced file does not exist: {path}")
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def section(self, name, default=None):
        return self.raw.get(name, default if default is not None else {})

    # -- automaton
    def automaton(self) -> Automaton:
        """The complement (Buchi) automaton used by the decomposition."""
        if "automaton" not in self.cache:
            if "automaton" in self.raw:
                obj = self.read_json(self.raw["automaton"])
            elif "states" in self.raw:
                obj = self.raw
            else:
                raise ConfigError("config has no automaton")
            try:
                a = Automaton.from_json(obj)
            except (AutomatonError, KeyError, TypeError) as exc:
                raise ConfigError(f"malformed automaton: {exc}") from None
            self.cache["spec"] = a
            self.cache["automaton"] = complement_to_buchi(a) if a.acceptance == COBUCHI else a
        return self.cache["automaton"]

    # -- system
    def system(self):
        if "system" not in self.cache:
            spec = self.raw.get("system")
            if spec is None:
                raise ConfigError("config has no system")
            try:
                if "builder" in spec:
                    name = spec["builder"]
                    if name not in casestudies.BUILDERS:
                        raise ConfigError(f"unknown builder {name!r}; choose from {sorted(casestudies.BUILDERS)}")
                    n = self.n if self.n is not None else int(spec.get("n", 10))
                    case = casestudies.BUILDERS[name](n)
                    self.cache["case"] = case
                    sys_, lab = case.system, case.labeling
                else:
                    sys_ = system_from_json(self.read_json(spec["file"]))
                    lab = None
                if "labeling" in self.raw:
                    lab = labeling_from_json(self.read_json(self.raw["labeling"]), network_state_region(sys_))
            except (ModelError, KeyError, TypeError) as exc:
                raise ConfigError(f"invalid system: {exc}") from None
            self.cache["system"] = (sys_, lab)
        return self.cache["system"]

    def labeling(self):
        if "system" not in self.raw and "labeling" not in self.raw:
            return None
        return self.system()[1]

    # -- certificates
    def certificates(self) -> dict:
        """``PartitionKey -> list of per-subsystem certificates``."""
        if "certificates" not in self.cache:
            sys_, _ = self.system()
            entries = self.raw.get("certificates")
            out = {}
            if entries is None and "case" in self.cache:
                for key, cert in self.cache["case"].certificates.items():
                    out[key] = [cert] * sys_.n
            for entry in entries or []:
                try:
                    key = PartitionKey.from_json(entry["key"])
                    if "file" in entry:
                        shared = certificate_from_json(self.read_json(entry["file"]), sys_.subsystems[0])
                        certs = [shared] * sys_.n
                    else:
                        files = entry["files"]
                        if len(files) != sys_.n:
                            raise ConfigError("one certificate file per subsystem is required")
                        certs = [certificate_from_json(self.read_json(f), s) for f, s in zip(files, sys_.subsystems)]
                except (KeyError, TypeError, VerificationError, KFnError) as exc:
                    raise ConfigError(f"invalid certificate entry: {exc}") from None
                out[key] = certs
            self.cache["certificates"] = out
        return self.cache["certificates"]

    def policy(self):
        sys_, _ = self.system()
        return casestudies.assemble_policy(sys_, self.automaton(), self.certificates())

    def grid(self) -> GridSpec:
        v = self.section("verification")
        try:
            return GridSpec(
                state_step=float(self.grid_resolution or v.get("grid_resolution", 1e-2)),
                internal_step=v.get("internal_step"),
                inset=float(v.get("inset", 0.0)),
                tolerance=float(v.get("tolerance", 0.0)),
                tau=float(v.get("tau", 1e-9)),
                max_internal_points=int(v.get("max_internal_points", 10_000)),
                conditions=tuple(v.get("conditions", ("alpha", "initial", "unsafe", "decrease"))),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid verification settings: {exc}") from None


def load_project(args) -> Project:
    if not args.config:
        raise ConfigError("--config is required")
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    out = Path(args.out) if args.out else path.parent / raw.get("output", "out")
    seed = args.seed if args.seed is not None else int(raw.get("simulation", {}).get("seed", 0))
    return Project(raw, path.parent, out, seed, args.n, args.horizon, args.grid_resolution)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------- decompose

def decomposition_files(a: Automaton, labeling=None) -> dict:
    """File name -> text for the decomposition of a Buchi automaton."""
    frags = compute_run_fragments(a)
    by_prop = group_by_initial_prop(a, frags)
    trips = {p: [{"fragment": list(f), "triplets": [list(t) for t in extract_triplets(f)]} for f in fs]
             for p, fs in by_prop.items()}
    buckets = build_partitions(all_triplets(a, frags), a)
    parts = []
    for key, bucket in buckets.items():
        entry = {"key": key.to_json(a), "label": key.label(a), "triplets": [list(t) for t in bucket],
                 "merged_target": sorted(merged_target_props(a, key, bucket), key=a.alphabet.index)}
        if labeling is not None:
            entry["feasible"] = bucket_feasible(a, key, bucket, labeling)
            entry["triplet_feasible"] = [triplet_feasible(a, t, labeling) for t in bucket]
        parts.append(entry)
    sw = build_switching_automaton(a)
    obligations = required_certificates(a, labeling, frags)
    obl = [{"prop": o.prop, "coverable": o.coverable, "keys": [k.to_json(a) for k in o.keys],
            "labels": [k.label(a) for k in o.keys], "uncovered": [list(f) for f in o.uncovered]}
           for o in obligations]
    needed = []
    for o in obligations:
        for k in o.keys:
            if k not in needed:
                needed.append(k)
    return {
        "automaton.json": _dump(a.to_json()),
        "automaton.dot": a.to_dot(),
        "fragments.json": _dump([list(f) for f in frags]),
        "fragments_by_prop.json": _dump({p: [list(f) for f in fs] for p, fs in by_prop.items()}),
        "triplets.json": _dump(trips),
        "partitions.json": _dump(parts),
        "switching.json": _dump(sw.to_json(a)),
        "switching.dot": sw.to_dot(a),
        "obligations.json": _dump({"obligations": obl, "required": [k.label(a) for k in needed]}),
        "_report": _decompose_report(a, frags, buckets, obligations, needed, labeling),
    }


def _decompose_report(a, frags, buckets, obligations, needed, labeling) -> str:
    lines = [f"run fragments: {len(frags)}"]
    for f in frags:
        lines.append("  (" + ",".join(f) + ")")
    if labeling is None:
        lines.append("no labeling given: region feasibility not checked")
    else:
        lines.append("triplet feasibility (overlapping start and target regions admit no certificate):")
        for key, bucket in buckets.items():
            for t in bucket:
                ok = triplet_feasible(a, t, labeling)
                lines.append(f"  ({','.join(t)}): {'feasible' if ok else 'infeasible (regions overlap)'}")
    for o in obligations:
        if not o.coverable:
            lines.append(f"  {o.prop}: fragment(s) "
                         + "; ".join("(" + ",".join(f) + ")" for f in o.uncovered)
                         + " admit no certificate (every triplet has overlapping regions)")
    names = [k.label(a) for k in needed]
    if len(needed) == 1:
        lines.append(f"only partition {names[0]} needs a certificate")
    else:
        lines.append(f"{len(needed)} certificates required: " + ", ".join(names))
    return "\n".join(lines) + "\n"


def cmd_decompose(args) -> int:
    p = load_project(args)
    a = p.automaton()
    labeling = p.labeling() if ("system" in p.raw or "labeling" in p.raw) else None
    t0 = time.perf_counter()
    files = decomposition_files(a, labeling)
    report = files.pop("_report")
    for name, text in files.items():
        _write(p.out / name, text)
    _write(p.out / "report.txt", report)
    print(report, end="")
    print(f"wrote {len(files) + 1} files to {p.out} in {time.perf_counter() - t0:.3f} s")
    return EXIT_OK


# ---------------------------------------------------------------- gains

def _gain_summary(g) -> list:
    coeffs = {}
    for (i, j), f in g.entries.items():
        if i == j:
            continue
        coeffs.setdefault(repr(f), [0, f])
        coeffs[repr(f)][0] += 1
    return [{"gain": kfn_to_json(f), "edges": c} for c, f in coeffs.values()]


def run_gains(p: Project) -> dict:
    sys_, _ = p.system()
    out = {}
    for key, certs in p.certificates().items():
        a_label = key.label(p.automaton()) if "automaton" in p.raw else key.label()
        entry = {"stage": "gains"}
        try:
            g = gamma_matrix(certs, sys_.wiring())
            entry["gains"] = _gain_summary(g)
            entry["small_gain"] = bool(check_small_gain(g))
            if entry["small_gain"]:
                phis = find_phi(g)
                entry["phi"] = sorted({json.dumps(kfn_to_json(f)) for f in phis})
        except (SmallGainError, UnsupportedGainClass, KFnError) as exc:
            entry["small_gain"] = False
            entry["error"] = str(exc)
        out[a_label] = entry
    return out


def cmd_check_smallgain(args) -> int:
    p = load_project(args)
    res = run_gains(p)
    _write(p.out / "gains.json", _dump(res))
    ok = True
    for label, entry in res.items():
        gains = ", ".join(f"{json.dumps(g['gain'])} x{g['edges']}" for g in entry.get("gains", []))
        print(f"{label}: small-gain {'PASS' if entry['small_gain'] else 'FAIL'}; gains {gains}")
        if "error" in entry:
            print(f"  {entry['error']}")
        ok &= entry["small_gain"]
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------- verify

def run_verify_standalone(p: Project) -> dict:
    """Local checks only, for certificate entries that carry their own subsystem."""
    grid = p.grid()
    result = {}
    for k, entry in enumerate(p.raw.get("certificates") or []):
        name = entry.get("name", f"certificate{k}")
        try:
            sub = _target_subsystem(p, entry["subsystem"])
            cert = certificate_from_json(p.read_json(entry["file"]), sub)
        except (KeyError, TypeError, ModelError, KFnError) as exc:
            raise ConfigError(f"invalid certificate entry {name!r}: {exc}") from None
        rep = verify_local(cert, sub, grid)
        result[name] = {"passed": rep.passed, "stages": [
            {"stage": "local", "subsystem": 0, "passed": rep.passed, "report": rep.to_json(), "text": rep.to_text()}]}
    if not result:
        raise ConfigError("config has no certificates to verify")
    return result


def run_verify(p: Project) -> dict:
    """All pipeline stages per partition key; each stage records pass/fail."""
    if "system" not in p.raw:
        return run_verify_standalone(p)
    sys_, _ = p.system()
    grid = p.grid()
    vcfg = p.section("verification")
    samples = int(vcfg.get("samples", 2000))
    policy = p.policy()
    result = {}
    a = p.automaton()
    for key, certs in p.certificates().items():
        label = key.label(a)
        stages = []
        seen = {}
        local_ok = True
        for i, (cert, sub) in enumerate(zip(certs, sys_.subsystems)):
            if id(cert) in seen:
                continue
            rep = verify_local(cert, sub, grid)
            seen[id(cert)] = rep
            local_ok &= rep.passed
            stages.append({"stage": "local", "subsystem": i, "passed": rep.passed, "report": rep.to_json(),
                           "text": rep.to_text()})
        try:
            g = gamma_matrix(certs, sys_.wiring())
            sg = bool(check_small_gain(g))
            stages.append({"stage": "small-gain", "passed": sg, "gains": _gain_summary(g)})
        except (SmallGainError, UnsupportedGainClass, KFnError) as exc:
            sg = False
            stages.append({"stage": "small-gain", "passed": False, "error": str(exc)})
        composed = None
        if sg:
            try:
                composed = compose(certs, wiring=sys_.wiring())
                stages.append({"stage": "level", "passed": True, "eps1": composed.eps1, "eps2": composed.eps2})
            except LevelConditionError as exc:
                stages.append({"stage": "level", "passed": False, "error": str(exc)})
        if composed is not None and key in policy.controllers:
            rep = check_decrease_composed(composed, sys_, policy.controllers[key], samples=samples, seed=p.seed,
                                          tolerance=float(vcfg.get("composed_tolerance", 1e-6)))
            cres = rep.conditions["composed_decrease"]
            stages.append({"stage": "composed-decrease", "passed": rep.passed, "worst": cres.worst_violation,
                           "note": cres.note})
        result[label] = {"passed": all(s["passed"] for s in stages), "stages": stages}
    return result


def cmd_verify(args) -> int:
    p = load_project(args)
    res = run_verify(p)
    text = []
    for label, entry in res.items():
        text.append(f"== {label}: {'PASS' if entry['passed'] else 'FAIL'}")
        for s in entry["stages"]:
            flag = "pass" if s["passed"] else "FAIL"
            if s["stage"] == "local":
                text.append(f"-- stage local (subsystem {s['subsystem']}): {flag}")
                text.append(s["text"].rstrip())
            elif s["stage"] == "small-gain":
                detail = ", ".join(f"{json.dumps(g['gain'])} x{g['edges']}" for g in s.get("gains", []))
                text.append(f"-- stage small-gain: {flag} {detail or s.get('error', '')}")
            elif s["stage"] == "level":
                detail = s.get("error") or f"eps1 = {s['eps1']:.6g} <= eps2 = {s['eps2']:.6g}"
                text.append(f"-- stage level: {flag} {detail}")
            else:
                text.append(f"-- stage {s['stage']}: {flag} worst = {s['worst']:.6g} ({s['note']})")
        failed = [s["stage"] for s in entry["stages"] if not s["passed"]]
        if failed:
            text.append(f"failed stage(s): {', '.join(dict.fromkeys(failed))}")
    report = "\n".join(text) + "\n"
    for entry in res.values():
        for s in entry["stages"]:
            s.pop("text", None)
    _write(p.out / "verification.json", _dump(res))
    _write(p.out / "verification.txt", report)
    print(report, end="")
    return EXIT_OK if res and all(e["passed"] for e in res.values()) else EXIT_VERIFY


# ---------------------------------------------------------------- synthesize

def _target_subsystem(p: Project, spec):
    if isinstance(spec, dict):
        return subsystem_from_json(spec)
    if isinstance(spec, str):
        return subsystem_from_json(p.read_json(spec))
    sys_, _ = p.system()
    return sys_.subsystems[int(spec)]


def cmd_synthesize(args) -> int:
    p = load_project(args)
    syn = p.section("synthesis")
    if not syn or "targets" not in syn:
        raise ConfigError("config has no synthesis targets")
    try:
        template = Template.from_json(syn.get("template", {"degree": 2}))
        cfg_obj = dict(syn.get("config", {}))
        if args.seed is not None:
            cfg_obj["seed"] = args.seed
        if p.grid_resolution is not None:
            cfg_obj["final_grid_resolution"] = p.grid_resolution
        cfg = CegisConfig.from_json(cfg_obj)
    except (SynthesisError, KFnError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid synthesis settings: {exc}") from None
    failed = False
    for k, target in enumerate(syn["targets"]):
        name = target.get("name", f"target{k}")
        try:
            sub = _target_subsystem(p, target.get("subsystem", 0))
            r = target["regions"]
            regions = SynthesisRegions(Region.from_json(r["initial"]), Region.from_json(r["unsafe"]),
                                       Region.from_json(r.get("state", sub.state_region.to_json())),
                                       Region.from_json(r.get("internal", sub.internal_region.to_json())))
            u_set = target.get("inputs")
            u_set = sub.inputs if u_set is None else np.asarray(u_set, dtype=float)
        except (ModelError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synthesis target {name!r}: {exc}") from None
        try:
            res = synthesize_cegis(template, sub, regions, u_set, cfg, name=name)
        except SynthesisError as exc:
            print(f"{name}: synthesis failed: {exc}")
            failed = True
            continue
        _write(p.out / f"synthesis_log_{name}.csv", res.log_csv())
        if res.success:
            cert_json = res.certificate.to_json()
            if "key" in target:
                cert_json["key"] = target["key"]
            _write(p.out / f"cert_{name}.json", _dump(cert_json))
            print(f"{name}: certificate found after {res.iterations} iterations "
                  f"(eps_upper = {res.certificate.eps_upper:.6g}, eps_lower = {res.certificate.eps_lower:.6g}, "
                  f"level condition {'holds' if res.level_ok else 'fails'})")
        else:
            _write(p.out / f"synthesis_failure_{name}.json",
                   _dump({"reason": res.reason, "iterations": res.iterations,
                          "best_violation": res.best_violation,
                          "counterexamples": [c.__dict__ for c in res.counterexamples]}))
            print(f"{name}: synthesis failed after {res.iterations} iterations: {res.reason}")
            failed = True
    return EXIT_SYNTH if failed else EXIT_OK


# ---------------------------------------------------------------- simulate

def _initial_states(spec, dim: int, runs: int, rng) -> np.ndarray:
    if spec is None:
        raise ConfigError("simulation needs an x0 specification")
    if isinstance(spec, dict) and "uniform" in spec:
        lo, hi = spec["uniform"]
        return rng.uniform(float(lo), float(hi), size=(runs, dim))
    if isinstance(spec, dict) and "box" in spec:
        b = np.asarray(spec["box"], dtype=float)
        if b.shape != (dim, 2):
            raise ConfigError(f"x0 box must have {dim} rows")
        return rng.uniform(b[:, 0], b[:, 1], size=(runs, dim))
    x = np.asarray(spec, dtype=float)
    if x.shape == (dim,):
        return x[None, :]
    raise ConfigError(f"x0 must have length {dim}")


def cmd_simulate(args) -> int:
    p = load_project(args)
    sim = p.section("simulation")
    horizon = p.horizon if p.horizon is not None else int(sim.get("horizon", 100))
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    sys_, lab = p.system()
    if lab is None:
        raise ConfigError("simulation needs a labeling")
    policy = p.policy()
    key_for_barrier = sim.get("barrier_key")
    barrier_fn = None
    if key_for_barrier is not None:
        key = PartitionKey.from_json(key_for_barrier)
        certs = p.certificates().get(key)
        if certs is None:
            raise ConfigError(f"no certificate for barrier key {key.label()}")
        from .barrier import eval_composed
        composed = compose(certs, wiring=sys_.wiring())
        barrier_fn = lambda xs: eval_composed(composed, xs)
    rng = np.random.default_rng(p.seed)
    runs = int(sim.get("runs", 1))
    x0s = _initial_states(sim.get("x0"), sys_.state_dim, runs, rng)
    a = p.automaton()
    monitors = []
    for r, x0 in enumerate(x0s):
        tr = simulate(sys_, policy, lab, x0, horizon, barrier_fn)
        mon = monitor_trace(tr, a)
        entry = mon.to_json()
        entry.update(run=r, fallback_steps=len(tr.fallback_steps),
                     envelope_min=float(tr.states.min()), envelope_max=float(tr.states.max()))
        if tr.barrier is not None:
            entry["barrier_max"] = float(tr.barrier.max())
        monitors.append(entry)
        if r == 0:
            _write(p.out / "trace.csv", trace_csv(tr, a, bool(sim.get("full_state", False))))
            _write(p.out / "envelope.csv", envelope_csv(tr))
    passed = all(m["passed"] for m in monitors)
    _write(p.out / "monitor.json", _dump({"passed": passed, "runs": monitors}))
    for m in monitors:
        print(f"run {m['run']}: {'PASS' if m['passed'] else 'FAIL'} envelope [{m['envelope_min']:.4f}, "
              f"{m['envelope_max']:.4f}] accepting visits {len(m['final_visits'])} fallback steps {m['fallback_steps']}")
    return EXIT_OK if passed else EXIT_VERIFY


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "decompose": cmd_decompose,
    "check-smallgain": cmd_check_smallgain,
    "verify": cmd_verify,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compcbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="project JSON (or an automaton JSON for decompose)")
        sp.add_argument("--out", help="output directory (default: the config's 'output' entry)")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--n", type=int, help="number of subsystems for builder systems")
        sp.add_argument("--horizon", type=int, help="simulation horizon")
        sp.add_argument("--grid-resolution", type=float, help="state grid spacing for verification")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelError, AutomatonError, PolicyError, VerificationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
