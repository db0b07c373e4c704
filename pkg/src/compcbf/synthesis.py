"""Counterexample-guided search for polynomial local barrier certificates.

The learner proposes template coefficients that minimize the largest
violation over a growing set of witness points; the verifier grid is the
counterexample oracle.  For fixed class functions ``(alpha, kappa_hat,
gamma_hat)`` with linear ``kappa_hat`` and a fixed input per witness every
condition is linear in the coefficients, so each learner step is one linear
program.  Class functions are searched over a small candidate grid in an
outer loop.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .barrier import GridSpec, LocalCertificate, axis_points, local_margin, verify_local, _mesh, _spacing
from .comparison import Identity, KFn, Linear, Power, kfn_from_json, kfn_to_json
from .controllers import inf_norm
from .polynomial import Polynomial, monomial_matrix, total_degree_exponents
from .regions import Region
from .system import InputSpec, Subsystem

INFEASIBLE_OVERLAP = "initial and unsafe regions overlap; no barrier certificate can exist"
BUDGET_EXHAUSTED = "iteration budget exhausted"
_FIT_TOL = 1e-9


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    """Polynomial template ``sum_k c_k x^basis[k]`` with box bounds on the ``c_k``."""

    basis: tuple
    parameter_bounds: tuple = ()

    def __post_init__(self):
        basis = tuple(tuple(int(e) for e in row) for row in self.basis)
        if not basis:
            raise SynthesisError("template basis is empty")
        if len(set(basis)) != len(basis):
            raise SynthesisError("template basis exponents must be unique")
        bounds = tuple(tuple(map(float, b)) for b in self.parameter_bounds) or ((-100.0, 100.0),) * len(basis)
        if len(bounds) != len(basis):
            raise SynthesisError("one parameter bound per basis monomial is required")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "parameter_bounds", bounds)

    @classmethod
    def polynomial(cls, dim: int, degree: int, bound: float = 100.0) -> "Template":
        exps = total_degree_exponents(dim, degree)
        return cls(tuple(map(tuple, exps)), ((-bound, bound),) * len(exps))

    @property
    def parameter_count(self) -> int:
        return len(self.basis)

    @property
    def dim(self) -> int:
        return len(self.basis[0])

    def instantiate(self, coeffs) -> Polynomial:
        return Polynomial(tuple(float(c) for c in coeffs), self.basis)

    def to_json(self) -> dict:
        return {"basis": [list(r) for r in self.basis], "parameter_bounds": [list(b) for b in self.parameter_bounds]}

    @classmethod
    def from_json(cls, obj) -> "Template":
        if "degree" in obj:
            return cls.polynomial(int(obj.get("dim", 1)), int(obj["degree"]), float(obj.get("bound", 100.0)))
        return cls(tuple(map(tuple, obj["basis"])), tuple(map(tuple, obj.get("parameter_bounds", ()))))


@dataclass(frozen=True)
class CegisConfig:
    max_iterations: int = 60
    initial_grid_resolution: float = 0.25
    final_grid_resolution: float = 0.01
    refinement_factor: float = 2.0
    internal_grid_resolution: float | None = None
    learner_mode: str = "lp"
    tau: float = 1e-6
    tolerance: float = 1e-3
    alpha_candidates: tuple = (Power(0.01, 2.0),)
    kappa_candidates: tuple = (Linear(0.5), Linear(0.8), Linear(0.95))
    gamma_candidates: tuple = (Linear(0.1), Linear(0.5), Power(0.1, 2.0))
    witnesses_per_round: int = 8
    random_samples: int = 2000
    regularization: float = 1e-3
    robustness: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.learner_mode not in ("lp", "random"):
            raise SynthesisError(f"unknown learner mode {self.learner_mode!r}")
        if self.refinement_factor <= 1.0:
            raise SynthesisError("refinement_factor must exceed 1")
        if self.max_iterations < 0:
            raise SynthesisError("max_iterations must be non-negative")
        for k in self.kappa_candidates:
            if not isinstance(k, (Linear, Identity)):
                raise SynthesisError("kappa_hat candidates must be linear")

    def to_json(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for name in ("alpha_candidates", "kappa_candidates", "gamma_candidates"):
            out[name] = [kfn_to_json(k) for k in out[name]]
        return out

    @classmethod
    def from_json(cls, obj) -> "CegisConfig":
        obj = dict(obj)
        for name in ("alpha_candidates", "kappa_candidates", "gamma_candidates"):
            if name in obj:
                obj[name] = tuple(kfn_from_json(k) for k in obj[name])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise SynthesisError(f"unknown synthesis option(s): {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class SynthesisRegions:
    initial: Region
    unsafe: Region
    state: Region
    internal: Region


@dataclass(frozen=True)
class Counterexample:
    condition: str
    point: dict
    magnitude: float


@dataclass
class SynthesisResult:
    success: bool
    reason: str
    certificate: LocalCertificate | None = None
    iterations: int = 0
    counterexamples: list = field(default_factory=list)
    best_violation: float = float("inf")
    level_ok: bool | None = None
    log: list = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        cols = ["iteration", "alpha", "kappa_hat", "gamma_hat", "resolution", "learner_violation",
                "witnesses", "new_witnesses", "worst_condition", "worst_violation", "event"]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for row in self.log:
            w.writerow(row)
        return buf.getvalue()


# ---------------------------------------------------------------- oracle

def _search_grid(resolution: float, cfg: CegisConfig, collect: int) -> GridSpec:
    internal = cfg.internal_grid_resolution
    return GridSpec(state_step=resolution, internal_step=internal if internal is not None else resolution,
                    tolerance=cfg.tolerance, tau=cfg.tau, collect=collect)


def _restrict(cert: LocalCertificate, sub: Subsystem, regions: SynthesisRegions, u_set):
    cert = cert.replace(region_a=regions.initial, region_b=regions.unsafe, state_region=regions.state,
                        internal_region=regions.internal)
    if u_set is not None:
        sub = dataclasses.replace(sub, inputs=_as_inputs(u_set))
    return cert, sub


def _as_inputs(u_set) -> InputSpec:
    if isinstance(u_set, InputSpec):
        return u_set
    return InputSpec.finite(u_set)


def counterexample_search(c: LocalCertificate, s: Subsystem, regions: SynthesisRegions, u_set,
                          resolution: float, tau: float = 1e-9) -> Counterexample | None:
    """Worst margin-adjusted violation over all four conditions, or ``None`` when none is positive.

    For the decrease condition the reported input is the one with the
    smallest worst-case excess at that state, so a witness there means every
    input in ``u_set`` fails for some internal input.
    """
    cert, sub = _restrict(c, s, regions, u_set)
    spec = GridSpec(state_step=resolution, internal_step=resolution, tolerance=0.0, tau=tau, collect=1)
    report = verify_local(cert, sub, spec)
    worst = None
    for name, res in report.conditions.items():
        if res.worst_with_margin > 0.0 and (worst is None or res.worst_with_margin > worst.magnitude):
            worst = Counterexample(name, dict(res.witness), float(res.worst_with_margin))
    return worst


# ---------------------------------------------------------------- learner

@dataclass
class _Witness:
    condition: str
    x: np.ndarray
    w: np.ndarray | None
    margin: float

    def key(self, digits: int = 9):
        w = () if self.w is None else tuple(np.round(self.w, digits))
        return (self.condition, tuple(np.round(self.x, digits)), w)


def _rows(t: Template, sub: Subsystem, wits: Sequence[_Witness], alpha: KFn, kappa: float, gamma: KFn,
          u_pick: dict, tau: float):
    """Constraint rows ``A [c, e] - v <= b`` for the witness set."""
    p = t.parameter_count
    a_rows, b_rows = [], []
    for wt in wits:
        m = monomial_matrix(wt.x, t.basis)
        row = np.zeros(p + 1)
        if wt.condition == "alpha":
            row[:p] = -m
            rhs = -float(alpha(inf_norm(wt.x))) - wt.margin
        elif wt.condition == "initial":
            row[:p] = m
            row[p] = -1.0
            rhs = -wt.margin
        elif wt.condition == "unsafe":
            row[:p] = -m
            row[p] = 1.0
            rhs = -tau - wt.margin
        else:
            u = u_pick[tuple(np.round(wt.x, 9))]
            xn = sub.transition(wt.x, u, wt.w)
            row[:p] = monomial_matrix(xn, t.basis) - kappa * m
            rhs = float(gamma(inf_norm(wt.w))) - wt.margin
        a_rows.append(row)
        b_rows.append(rhs)
    return np.asarray(a_rows), np.asarray(b_rows)


def _choose_inputs(t: Template, sub: Subsystem, coeffs, kappa: float, gamma: KFn, wits) -> dict:
    """Per decrease-witness state, the input minimizing the worst excess over its recorded ``w``."""
    groups: dict = {}
    for wt in wits:
        if wt.condition == "decrease":
            groups.setdefault(tuple(np.round(wt.x, 9)), (wt.x, []))[1].append(wt)
    out = {}
    options = sub.inputs.values
    poly = t.instantiate(coeffs) if coeffs is not None else None
    for key, (x, ws) in groups.items():
        if poly is None:
            out[key] = options[len(options) // 2]
            continue
        best, best_u = np.inf, options[0]
        b_now = float(poly(x))
        for u in options:
            worst = max(float(poly(sub.transition(x, u, wt.w))) - kappa * b_now - float(gamma(inf_norm(wt.w)))
                        + wt.margin for wt in ws)
            if worst < best - 1e-15:
                best, best_u = worst, u
        out[key] = best_u
    return out


def _shortfall_lp(t: Template, a: np.ndarray, b: np.ndarray, reg: float, hard: np.ndarray | None = None):
    """Minimize ``sum(s) + reg * |c|_1`` subject to ``a z - s <= b`` and optionally ``hard z <= 0``-style rows."""
    p = t.parameter_count
    m = a.shape[0]
    # variables [c_1..c_p, e, s_1..s_m, g_1..g_p] with g_k >= |c_k|
    nv = p + 1 + m + p
    cost = np.zeros(nv)
    cost[p + 1:p + 1 + m] = 1.0
    cost[p + 1 + m:] = reg
    eye = np.eye(p)
    rows = [np.hstack([a, -np.eye(m), np.zeros((m, p))]),
            np.hstack([eye, np.zeros((p, 1 + m)), -eye]),
            np.hstack([-eye, np.zeros((p, 1 + m)), -eye])]
    rhs = [b, np.zeros(2 * p)]
    if hard is not None:
        ha, hb = hard
        rows.append(np.hstack([ha, np.zeros((ha.shape[0], m + p))]))
        rhs.append(hb)
    bounds = list(t.parameter_bounds) + [(0.0, None)] + [(0.0, None)] * m + [(0.0, None)] * p
    res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
    return res.x[:p + 1] if res.status == 0 else None


def _solve_lp(t: Template, a: np.ndarray, b: np.ndarray, reg: float = 0.0, rho: float = 0.0):
    """Fit ``a [c, e] <= b`` in two phases.

    Phase one minimizes the total shortfall of the rows.  When that leaves
    no shortfall, phase two keeps the rows as hard constraints and minimizes
    the total shortfall against the robustness target ``a z <= b - rho``.
    Returns the coefficients (with the level ``e`` last) and the largest
    row violation.
    """
    z = _shortfall_lp(t, a, b, reg)
    if z is None:
        return None, np.inf
    viol = float(np.max(a @ z - b)) if a.shape[0] else 0.0
    if viol > _FIT_TOL or rho <= 0.0:
        return z, viol
    z2 = _shortfall_lp(t, a, b - rho, reg, hard=(a, b + _FIT_TOL / 2))
    if z2 is not None:
        z = z2
        viol = float(np.max(a @ z - b))
    return z, viol


def _solve_random(t: Template, a: np.ndarray, b: np.ndarray, rng, samples: int):
    p = t.parameter_count
    lo = np.array([bd[0] for bd in t.parameter_bounds])
    hi = np.array([bd[1] for bd in t.parameter_bounds])
    coeffs = rng.uniform(lo, hi, size=(samples, p))
    # best level per sample: rows with +e bound it from below, rows with -e from above
    base = coeffs @ a[:, :p].T - b
    up = a[:, p] > 0
    down = a[:, p] < 0
    e_lo = np.max(-base[:, up], axis=1) if up.any() else np.zeros(samples)
    e_hi = np.min(base[:, down], axis=1) if down.any() else e_lo
    e = np.maximum(0.0, (e_lo + e_hi) / 2.0)
    viol = np.max(base + np.outer(e, a[:, p]), axis=1)
    k = int(np.argmin(viol))
    return np.concatenate([coeffs[k], [e[k]]]), float(viol[k])


def _learn(t, sub, wits, alpha, kappa, gamma, coeffs, cfg: CegisConfig, rng, rounds: int = 8):
    """Alternate between fitting coefficients and re-picking each witness state's input."""
    prev = coeffs[:-1] if coeffs is not None else None
    best_z, best_v, seen = None, np.inf, []
    for _ in range(rounds):
        u_pick = _choose_inputs(t, sub, prev, kappa, gamma, wits)
        sig = {k: tuple(v) for k, v in u_pick.items()}
        if sig in seen:
            break
        seen.append(sig)
        a, b = _rows(t, sub, wits, alpha, kappa, gamma, u_pick, cfg.tau)
        if cfg.learner_mode == "lp":
            z, viol = _solve_lp(t, a, b, cfg.regularization, cfg.robustness)
        else:
            z, viol = _solve_random(t, a, b, rng, cfg.random_samples)
        if z is None:
            break
        if viol < best_v:
            best_z, best_v = z, viol
        if viol <= _FIT_TOL:
            break
        prev = z[:-1]
    return best_z, best_v


# ---------------------------------------------------------------- main loop

def _seed_witnesses(regions: SynthesisRegions, resolution: float) -> list:
    out = []
    for cond, region in (("alpha", regions.state), ("initial", regions.initial), ("unsafe", regions.unsafe)):
        for box, minus in region.parts:
            axes = [axis_points(box.lo[d], box.hi[d], resolution) for d in range(box.dim)]
            pts = _mesh(axes).reshape(-1, box.dim)
            keep = np.ones(len(pts), dtype=bool)
            for c in minus:
                keep &= ~c.contains(pts)
            out += [_Witness(cond, x, None, 0.0) for x in pts[keep]]
    return out


def _level_bounds(poly: Polynomial, regions: SynthesisRegions, resolution: float, tau: float):
    """``(max(B + delta) on the initial grid, min(B - delta) - tau on the unsafe grid)``."""
    def extreme(region: Region, sign: float):
        best = -np.inf
        for box, minus in region.parts:
            axes = [axis_points(box.lo[d], box.hi[d], resolution) for d in range(box.dim)]
            mesh = _mesh(axes)
            v = sign * poly(mesh)
            adj = v + local_margin(v, range(box.dim))
            keep = np.ones(v.shape, dtype=bool)
            for c in minus:
                keep &= ~c.contains(mesh)
            if keep.any():
                best = max(best, float(np.where(keep, adj, -np.inf).max()))
        return best
    upper = extreme(regions.initial, 1.0)
    lower = -extreme(regions.unsafe, -1.0) - tau
    return upper, lower


def _check_inputs(s: Subsystem, regions: SynthesisRegions, u_set):
    inputs = _as_inputs(u_set) if u_set is not None else s.inputs
    if not inputs.is_finite:
        raise SynthesisError("synthesis needs a finite input set")
    for name in ("initial", "unsafe", "state", "internal"):
        r = getattr(regions, name)
        for b in r.boxes:
            if not (np.all(np.isfinite(b.lo)) and np.all(np.isfinite(b.hi))):
                raise SynthesisError(f"unbounded {name} region")
    if not regions.state.parts:
        raise SynthesisError("empty state region")
    return inputs


def synthesize_cegis(t: Template, s: Subsystem, regions: SynthesisRegions, u_set, cfg: CegisConfig,
                     name: str = "synthesized") -> SynthesisResult:
    """Search for a certificate; a returned certificate always passes ``verify_local`` at the final grid."""
    try:
        inputs = _check_inputs(s, regions, u_set)
    except ValueError as exc:
        raise SynthesisError(str(exc)) from None
    if t.dim != s.state_dim:
        raise SynthesisError(f"template dimension {t.dim} does not match the state dimension {s.state_dim}")
    sub = dataclasses.replace(s, inputs=inputs)
    if regions.initial.intersects(regions.unsafe):
        return SynthesisResult(False, INFEASIBLE_OVERLAP)
    rng = np.random.default_rng(cfg.seed)
    log: list = []
    best_violation, last_cex = np.inf, []
    iteration = 0
    combos = list(itertools.product(cfg.alpha_candidates, cfg.kappa_candidates, cfg.gamma_candidates))
    for alpha, kappa_fn, gamma in combos:
        kappa = float(kappa_fn(1.0))
        res = cfg.initial_grid_resolution
        wits = _seed_witnesses(regions, res)
        index = {w.key(): w for w in wits}
        coeffs = None
        while iteration < cfg.max_iterations:
            iteration += 1
            row = {"iteration": iteration, "alpha": repr(alpha), "kappa_hat": repr(kappa_fn),
                   "gamma_hat": repr(gamma), "resolution": res}
            z, viol = _learn(t, sub, wits, alpha, kappa, gamma, coeffs, cfg, rng)
            row["learner_violation"] = viol
            row["witnesses"] = len(wits)
            if z is None or viol > _FIT_TOL:
                best_violation = min(best_violation, viol)
                row.update(new_witnesses=0, event="no coefficients fit the witnesses; next class functions")
                log.append(row)
                break
            coeffs = z
            poly = t.instantiate(z[:-1])
            cand = LocalCertificate(poly, alpha, float(z[-1]), float(z[-1]), regions.initial, regions.unsafe,
                                    regions.state, regions.internal, kappa_hat=kappa_fn, gamma_hat=gamma, name=name)
            report = verify_local(cand, sub, _search_grid(res, cfg, cfg.witnesses_per_round))
            found = []
            worst_name, worst_val = "", -np.inf
            for cname, cres in report.conditions.items():
                if cres.worst_with_margin > worst_val:
                    worst_name, worst_val = cname, cres.worst_with_margin
                for wdict in cres.witnesses:
                    w = np.asarray(wdict["w"], dtype=float) if "w" in wdict else None
                    found.append(_Witness(cname, np.asarray(wdict["x"], dtype=float), w, float(wdict["margin"])))
            row["worst_condition"] = worst_name
            row["worst_violation"] = worst_val
            best_violation = min(best_violation, max(worst_val, 0.0))
            last_cex = [Counterexample(w.condition, {"x": w.x.tolist(), **({"w": w.w.tolist()} if w.w is not None else {})},
                                       w.margin) for w in found]
            if not found:
                if res > cfg.final_grid_resolution * (1 + 1e-12):
                    res = max(cfg.final_grid_resolution, res / cfg.refinement_factor)
                    row.update(new_witnesses=0, event="clean at this resolution; refining")
                    log.append(row)
                    continue
                upper, lower = _level_bounds(poly, regions, res, cfg.tau)
                cert = cand.replace(eps_upper=max(upper, 0.0), eps_lower=max(lower, 0.0))
                final = verify_local(cert, sub, _search_grid(res, cfg, 0))
                if final.passed:
                    row.update(new_witnesses=0, event="verified")
                    log.append(row)
                    return SynthesisResult(True, "verified", cert, iteration, [], 0.0, upper <= lower, log)
                row.update(new_witnesses=0, event="level bounds failed the final check")
                log.append(row)
                break
            # witnesses enter without margin; a repeat means the grid is too
            # coarse around it, so add its neighbours, then refine the grid,
            # and only at the final resolution carry the observed margin
            new = []
            repeats = []
            for w in found:
                k = w.key()
                if k in index:
                    repeats.append(w)
                else:
                    w.margin = 0.0
                    index[k] = w
                    new.append(w)
            event = "counterexamples added"
            if not new:
                for w in repeats:
                    for d in range(w.x.size):
                        for sgn in (-1.0, 1.0):
                            nb = w.x.copy()
                            nb[d] += sgn * res / cfg.refinement_factor
                            cand_w = _Witness(w.condition, nb, w.w, 0.0)
                            if regions.state.contains(nb) and cand_w.key() not in index:
                                index[cand_w.key()] = cand_w
                                new.append(cand_w)
                event = "repeated counterexamples; neighbours added"
            if not new:
                if res > cfg.final_grid_resolution * (1 + 1e-12):
                    res = max(cfg.final_grid_resolution, res / cfg.refinement_factor)
                    event = "repeated counterexamples; refining"
                else:
                    for w in repeats:
                        index[w.key()].margin = max(index[w.key()].margin, w.margin)
                    event = "repeated counterexamples; margins tightened"
            wits.extend(new)
            row.update(new_witnesses=len(new), event=event)
            log.append(row)
        if iteration >= cfg.max_iterations:
            break
    reason = BUDGET_EXHAUSTED if iteration >= cfg.max_iterations or not combos else \
        "no class-function candidate admits a certificate"
    if cfg.max_iterations == 0:
        reason = BUDGET_EXHAUSTED
    return SynthesisResult(False, reason, None, iteration, last_cex, float(best_violation), None, log)
