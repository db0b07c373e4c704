"""Local and composed barrier certificates and their grid-based verification.

A local certificate for subsystem i must satisfy, on its regions,

* ``alpha``     B(x) >= alpha(|x|)                      for x in X
* ``initial``   B(x) <= eps_upper                       for x in X_a
* ``unsafe``    B(x) >  eps_lower                       for x in X_b
* ``decrease``  for all x exists u for all w:
                B(f(x, u, w)) <= kappa_hat(B(x)) + gamma_hat(|w|)   (additive form)
                or <= max(kappa(B(x)), gamma_w(|w|))                (max form)

Each condition is checked on a grid.  A violation value ``v`` (<= 0 means
satisfied) is computed at every grid point together with a local margin
``delta = L * h / 2`` that bounds how much ``v`` can grow between grid
points, where ``L`` is estimated from neighbouring grid differences (or
given by the caller).  A condition is *certified* when ``v + delta <= 0``
everywhere; it *passes* when ``v + delta <= tolerance``; it *fails* when a
sampled ``v`` already exceeds the tolerance; otherwise it is *unknown*.
Norms are infinity norms.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .comparison import (DEFAULT_PSI, GainMatrix, KFn, Linear, SmallGainError, Zero, compose_all,
                         gamma_matrix, find_phi, check_small_gain, kfn_from_json, kfn_to_json,
                         max_form_conversion)
from .controllers import (Controller, DeterminizedController, NetworkController, PolynomialController,
                          inf_norm)
from .polynomial import Polynomial
from .regions import Box, Region

CONDITIONS = ("alpha", "initial", "unsafe", "decrease")


class VerificationError(ValueError):
    pass


class LevelConditionError(ValueError):
    pass


# ---------------------------------------------------------------- certificates

@dataclass(eq=False)
class LocalCertificate:
    barrier: Polynomial
    alpha: KFn
    eps_upper: float
    eps_lower: float
    region_a: Region
    region_b: Region
    state_region: Region
    internal_region: Region
    kappa_hat: KFn | None = None
    gamma_hat: KFn | None = None
    kappa: KFn | None = None
    gamma_w: KFn | None = None
    controller: Controller | None = None
    name: str = ""
    controller_json: dict | None = None

    def __post_init__(self):
        additive = self.kappa_hat is not None and self.gamma_hat is not None
        maxform = self.kappa is not None and self.gamma_w is not None
        if not (additive or maxform):
            raise VerificationError("a certificate needs (kappa_hat, gamma_hat) or (kappa, gamma_w)")
        if self.eps_upper < 0 or self.eps_lower < 0:
            raise VerificationError("eps_upper and eps_lower must be non-negative")
        if self.state_region.parts:
            outer = self.state_region.bounding_box()
            for reg, label in ((self.region_a, "region_a"), (self.region_b, "region_b")):
                for b in reg.boxes:
                    if np.any(b.lo < outer.lo - 1e-12) or np.any(b.hi > outer.hi + 1e-12):
                        raise VerificationError(f"{label} is not inside the state region")

    @property
    def additive(self) -> bool:
        return self.kappa_hat is not None and self.gamma_hat is not None

    def max_form(self, psi: KFn | float = DEFAULT_PSI) -> tuple[KFn, KFn]:
        """``(kappa, gamma_w)``; stored max-form functions win over converted hats."""
        if self.kappa is not None and self.gamma_w is not None:
            return self.kappa, self.gamma_w
        return max_form_conversion(self.kappa_hat, self.gamma_hat, psi)

    def decrease_excess(self, b_next, b_now, w_norm):
        """Violation of the decrease bound (<= 0 when satisfied)."""
        if self.additive:
            return b_next - self.kappa_hat(b_now) - self.gamma_hat(w_norm)
        return b_next - np.maximum(self.kappa(b_now), self.gamma_w(w_norm))

    def replace(self, **changes) -> "LocalCertificate":
        fields = dict(self.__dict__)
        fields.update(changes)
        return LocalCertificate(**fields)

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "barrier": self.barrier.to_json(),
            "alpha": kfn_to_json(self.alpha),
            "eps_upper": self.eps_upper,
            "eps_lower": self.eps_lower,
            "region_a": self.region_a.to_json(),
            "region_b": self.region_b.to_json(),
            "state_region": self.state_region.to_json(),
            "internal_region": _region_json_compact(self.internal_region),
        }
        for key in ("kappa_hat", "gamma_hat", "kappa", "gamma_w"):
            val = getattr(self, key)
            if val is not None:
                out[key] = kfn_to_json(val)
        if self.controller_json is not None:
            out["controller"] = self.controller_json
        elif isinstance(self.controller, PolynomialController):
            out["controller"] = self.controller.to_json()
        return out


def _region_json_compact(r: Region):
    if len(r.parts) == 1 and not r.parts[0][1]:
        b = r.parts[0][0]
        if b.dim > 4 and np.all(b.lo == b.lo[0]) and np.all(b.hi == b.hi[0]):
            return {"cube": [float(b.lo[0]), float(b.hi[0])]}
    return r.to_json()


def _region_from_json(obj, dim: int | None) -> Region:
    if isinstance(obj, Mapping) and "cube" in obj:
        if dim is None:
            raise VerificationError("a cube region needs a known dimension")
        lo, hi = obj["cube"]
        return Region.of(Box.cube(lo, hi, dim))
    return Region.from_json(obj)


def build_controller(spec, barrier: Polynomial, kappa_hat, gamma_hat, subsystem) -> Controller | None:
    if spec is None:
        return None
    if "polynomial" in spec:
        polys = tuple(Polynomial.from_json(p) for p in spec["polynomial"])
        clamp = subsystem.inputs.clamp if subsystem is not None else None
        return PolynomialController(polys, clamp)
    if "determinized" in spec:
        if subsystem is None:
            raise VerificationError("a determinized controller needs the subsystem model")
        if kappa_hat is None or gamma_hat is None:
            raise VerificationError("a determinized controller needs additive-form kappa_hat and gamma_hat")
        opts = spec["determinized"] or {}
        w = opts.get("w_star", "centroid")
        if w == "centroid":
            w_star = None
        elif isinstance(w, Mapping) and "fill" in w:
            w_star = np.full(subsystem.internal_dim, float(w["fill"]))
        else:
            w_star = np.asarray(w, dtype=float)
        step = None
        if getattr(subsystem, "reference_step", None) is not None:
            ws = subsystem.internal_region.bounding_box().center() if w_star is None else w_star
            step = subsystem.reference_step(ws)
        return DeterminizedController.for_subsystem(barrier, kappa_hat, gamma_hat, subsystem, w_star, step)
    raise VerificationError(f"unrecognized controller spec {spec!r}")


def certificate_from_json(obj: Mapping, subsystem=None) -> LocalCertificate:
    try:
        barrier = Polynomial.from_json(obj["barrier"])
        sdim = barrier.dim
        wdim = subsystem.internal_dim if subsystem is not None else None
        opt = {k: kfn_from_json(obj[k]) for k in ("kappa_hat", "gamma_hat", "kappa", "gamma_w") if k in obj}
        ctrl_spec = obj.get("controller")
        cert = LocalCertificate(
            barrier=barrier,
            alpha=kfn_from_json(obj["alpha"]),
            eps_upper=float(obj["eps_upper"]),
            eps_lower=float(obj["eps_lower"]),
            region_a=_region_from_json(obj["region_a"], sdim),
            region_b=_region_from_json(obj["region_b"], sdim),
            state_region=_region_from_json(obj["state_region"], sdim),
            internal_region=_region_from_json(obj.get("internal_region", []), wdim),
            name=obj.get("name", ""),
            controller_json=ctrl_spec,
            **opt,
        )
    except KeyError as exc:
        raise VerificationError(f"certificate JSON is missing field {exc}") from None
    cert.controller = build_controller(ctrl_spec, barrier, cert.kappa_hat, cert.gamma_hat, subsystem)
    return cert


def load_certificate(path, subsystem=None) -> LocalCertificate:
    with open(path) as fh:
        return certificate_from_json(json.load(fh), subsystem)


def eval_barrier(b: Polynomial, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != b.dim:
        raise VerificationError(f"barrier expects dimension {b.dim}, got {x.shape[-1]}")
    return b(x)


# ---------------------------------------------------------------- reports

@dataclass
class ConditionResult:
    name: str
    status: str
    certified: bool
    worst_violation: float
    worst_with_margin: float
    margin: float
    witness: dict
    points: int
    note: str = ""
    witnesses: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "certified": self.certified,
            "worst_violation": self.worst_violation,
            "worst_with_margin": self.worst_with_margin,
            "margin": self.margin,
            "witness": self.witness,
            "points": self.points,
            "note": self.note,
        }


@dataclass
class VerificationReport:
    subject: str
    conditions: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.conditions) and all(c.status == "pass" for c in self.conditions.values())

    def status(self, name: str) -> str:
        return self.conditions[name].status

    def to_json(self) -> dict:
        return {"subject": self.subject, "passed": self.passed, "grid": self.grid,
                "conditions": {k: v.to_json() for k, v in self.conditions.items()}}

    def to_text(self) -> str:
        lines = [f"verification of {self.subject}: {'PASS' if self.passed else 'FAIL'}"]
        for k, v in self.grid.items():
            lines.append(f"  grid {k}: {v}")
        for name, c in self.conditions.items():
            flag = "certified" if c.certified else "sampled only"
            lines.append(f"  {name:10s} {c.status:8s} ({flag}) worst={c.worst_violation:.6g} "
                         f"worst+margin={c.worst_with_margin:.6g} margin={c.margin:.3g} points={c.points}")
            if c.status != "pass" and c.witness:
                lines.append(f"             witness {json.dumps(_abbreviate(c.witness))}")
            if c.note:
                lines.append(f"             {c.note}")
        return "\n".join(lines) + "\n"


def _abbreviate(witness: dict, keep: int = 4) -> dict:
    """Shorten long vectors for the text report; JSON output keeps them whole."""
    out = {}
    for k, v in witness.items():
        if isinstance(v, list) and len(v) > 2 * keep:
            v = v[:keep] + [f"... {len(v)} values"]
        out[k] = v
    return out


def _classify(worst_v: float, worst_adj: float, tolerance: float) -> tuple[str, bool]:
    if worst_adj <= 0.0:
        return "pass", True
    if worst_adj <= tolerance:
        return "pass", False
    if worst_v > tolerance:
        return "fail", False
    return "unknown", False


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class GridSpec:
    """Grid for ``verify_local``.

    ``state_step`` is the spacing on state regions; ``internal_step`` on the
    internal-input region (chosen so the internal grid has at most
    ``max_internal_points`` points when left unset).  ``inset`` moves the grid
    that far inside every box, ``tau`` is the strictness slack for the
    unsafe condition and ``tolerance`` the permitted margin-adjusted violation.
    ``lipschitz`` optionally fixes a Lipschitz constant per condition instead
    of the sampled local estimate.  ``collect > 0`` keeps up to that many
    grid points per condition whose margin-adjusted violation exceeds
    ``tolerance`` (worst first).
    """

    state_step: float = 1e-2
    internal_step: float | None = None
    inset: float = 0.0
    tolerance: float = 0.0
    tau: float = 1e-9
    lipschitz: Mapping | None = None
    max_internal_points: int = 10_000
    chunk_elements: int = 4_000_000
    conditions: tuple = CONDITIONS
    collect: int = 0

    def refined(self, factor: float = 2.0) -> "GridSpec":
        internal = None if self.internal_step is None else self.internal_step / factor
        return dataclasses.replace(self, state_step=self.state_step / factor, internal_step=internal)


def axis_points(lo: float, hi: float, step: float, inset: float = 0.0) -> np.ndarray:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise VerificationError("unbounded region")
    a, b = lo + inset, hi - inset
    if b <= a:
        return np.array([(lo + hi) / 2.0])
    count = int(math.ceil((b - a) / step - 1e-9)) + 1
    return np.linspace(a, b, max(count, 2))


def _mesh(axes: Sequence[np.ndarray]) -> np.ndarray:
    if not axes:
        return np.zeros((1, 0))
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def local_margin(v: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Half the largest neighbouring difference along each grid axis, summed over axes."""
    delta = np.zeros_like(v)
    for ax in axes:
        if v.shape[ax] < 2:
            continue
        d = np.abs(np.diff(v, axis=ax))
        m = np.zeros_like(v)
        lo = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        m[tuple(lo)] = d
        m[tuple(hi)] = np.maximum(m[tuple(hi)], d)
        delta += m / 2.0
    return delta


def _spacing(axes) -> list:
    return [float(a[1] - a[0]) if a.size > 1 else 0.0 for a in axes]


def _margin(v, grid_axes_idx, spacings, spec: GridSpec, name: str):
    if spec.lipschitz and name in spec.lipschitz:
        return np.full_like(v, float(spec.lipschitz[name]) * sum(spacings) / 2.0)
    return local_margin(v, grid_axes_idx)


def _top(found: list, k: int) -> list:
    return sorted(found, key=lambda d: -d["score"])[:k]


def _region_condition(name, region: Region, fn, spec: GridSpec) -> ConditionResult:
    worst_v, worst_adj, margin_at, witness, points = -np.inf, -np.inf, 0.0, {}, 0
    found: list = []
    if not region.parts:
        return ConditionResult(name, "pass", True, -np.inf, -np.inf, 0.0, {}, 0, "empty region")
    for box, minus in region.parts:
        axes = [axis_points(box.lo[d], box.hi[d], spec.state_step, spec.inset) for d in range(box.dim)]
        mesh = _mesh(axes)
        v = fn(mesh)
        delta = _margin(v, range(box.dim), _spacing(axes), spec, name)
        keep = np.ones(v.shape, dtype=bool)
        for c in minus:
            keep &= ~c.contains(mesh)
        if not keep.any():
            continue
        adj = np.where(keep, v + delta, -np.inf)
        vv = np.where(keep, v, -np.inf)
        points += int(keep.sum())
        if spec.collect:
            flat = adj.reshape(-1)
            bad = np.flatnonzero(flat > spec.tolerance)
            top = bad[np.argsort(-flat[bad])][:spec.collect]
            pts = mesh.reshape(-1, mesh.shape[-1])
            found.extend({"x": pts[t].tolist(), "value": float(v.reshape(-1)[t]),
                          "margin": float(delta.reshape(-1)[t]), "score": float(flat[t])} for t in top)
        worst_v = max(worst_v, float(vv.max()))
        k = np.unravel_index(np.argmax(adj), adj.shape)
        if adj[k] > worst_adj:
            worst_adj = float(adj[k])
            margin_at = float(delta[k])
            witness = {"x": mesh[k].tolist(), "value": float(v[k])}
    status, certified = _classify(worst_v, worst_adj, spec.tolerance)
    return ConditionResult(name, status, certified, worst_v, worst_adj, margin_at, witness, points,
                           witnesses=_top(found, spec.collect))


@dataclass
class _InternalSet:
    """Internal-input points for one box: a full grid, or a sample when the grid is too large."""

    mesh: np.ndarray
    spacing: list
    gridded: bool


def _internal_sets(region: Region, spec: GridSpec) -> list:
    if not region.parts:
        return [_InternalSet(np.zeros((1, 0)), [], True)]
    out = []
    for box in region.boxes:
        p = box.dim
        step = spec.internal_step
        if step is None:
            per_axis = max(2, int(math.floor(spec.max_internal_points ** (1.0 / p))))
            step = max(float(np.max(box.hi - box.lo)) / (per_axis - 1), 1e-12)
        sizes = [int(math.ceil((box.hi[d] - box.lo[d]) / step - 1e-9)) + 1 for d in range(p)]
        total = math.prod(max(s, 2) for s in sizes)
        if total <= 50 * spec.max_internal_points:
            axes = [axis_points(box.lo[d], box.hi[d], step, 0.0) for d in range(p)]
            out.append(_InternalSet(_mesh(axes), _spacing(axes), True))
        else:
            out.append(_InternalSet(_sample_internal(box, spec), [], False))
    return out


def _sample_internal(box: Box, spec: GridSpec) -> np.ndarray:
    """Diagonal of the box plus seeded uniform points; used when a grid is out of reach."""
    count = max(2, spec.max_internal_points)
    diag = max(2, count // 2)
    t = np.linspace(0.0, 1.0, diag)[:, None]
    rng = np.random.default_rng(0)
    rand = rng.uniform(box.lo, box.hi, size=(count - diag, box.dim))
    return np.concatenate([box.lo + t * (box.hi - box.lo), rand], axis=0)


def _decrease_condition(cert: LocalCertificate, sub, spec: GridSpec) -> ConditionResult:
    if cert.controller is None and not sub.inputs.is_finite:
        raise VerificationError("decrease check needs a controller when the input set is continuous")
    name = "decrease"
    options = None if cert.controller is not None else sub.inputs.values
    worst_v, worst_adj, margin_at, witness, points = -np.inf, -np.inf, 0.0, {}, 0
    found: list = []
    w_sets = _internal_sets(cert.internal_region, spec)
    sampled = not all(ws.gridded for ws in w_sets)
    for xbox, xminus in cert.state_region.parts:
        xaxes = [axis_points(xbox.lo[d], xbox.hi[d], spec.state_step, spec.inset) for d in range(xbox.dim)]
        for wset in w_sets:
            wmesh = wset.mesh
            wshape = wmesh.shape[:-1]
            w_norm = inf_norm(wmesh)
            nx0 = xaxes[0].size
            per_row = int(np.prod([a.size for a in xaxes[1:]])) * int(np.prod(wshape)) * max(1, wmesh.shape[-1])
            n_opts = 1 if options is None else len(options)
            rows = max(2, spec.chunk_elements // max(1, per_row * n_opts))
            start = 0
            while start < nx0:
                stop = min(nx0, start + rows)
                lo_pad = 1 if start > 0 else 0
                hi_pad = 1 if stop < nx0 else 0
                sub_axes = [xaxes[0][start - lo_pad:stop + hi_pad]] + xaxes[1:]
                xmesh = _mesh(sub_axes)
                xd = xmesh.ndim - 1
                wd = len(wshape)
                xb = xmesh.reshape(xmesh.shape[:-1] + (1,) * wd + (xmesh.shape[-1],))
                wb = wmesh.reshape((1,) * xd + wmesh.shape)
                b_now = cert.barrier(xmesh).reshape(xmesh.shape[:-1] + (1,) * wd)
                wn = w_norm.reshape((1,) * xd + wshape)
                best_adj = best_v = best_u = None
                arg_w = None
                opt_list = [None] if options is None else list(options)
                for ui, u in enumerate(opt_list):
                    if u is None:
                        ux = cert.controller(xmesh)
                        ub = ux.reshape(ux.shape[:-1] + (1,) * wd + (ux.shape[-1],))
                    else:
                        ub = u.reshape((1,) * (xd + wd) + u.shape)
                    shape = np.broadcast_shapes(xb.shape[:-1], wb.shape[:-1])
                    xnext = sub.transition(np.broadcast_to(xb, shape + xb.shape[-1:]),
                                           np.broadcast_to(ub, shape + ub.shape[-1:]),
                                           np.broadcast_to(wb, shape + wb.shape[-1:]))
                    v = cert.decrease_excess(cert.barrier(xnext), b_now, wn)
                    if wset.gridded:
                        delta = _margin(v, range(v.ndim), _spacing(sub_axes) + wset.spacing, spec, name)
                    else:
                        # sampled internal inputs carry no neighbour structure
                        delta = _margin(v, range(xd), _spacing(sub_axes), spec, name)
                    adj = v + delta
                    flat_adj = adj.reshape(xmesh.shape[:-1] + (-1,))
                    worst_w_adj = flat_adj.max(axis=-1)
                    worst_w_v = v.reshape(flat_adj.shape).max(axis=-1)
                    wi = flat_adj.argmax(axis=-1)
                    d_at = np.take_along_axis(delta.reshape(flat_adj.shape), wi[..., None], axis=-1)[..., 0]
                    if best_adj is None:
                        best_adj, best_v, arg_w, best_u, best_d = worst_w_adj, worst_w_v, wi, np.zeros_like(wi), d_at
                    else:
                        better = worst_w_adj < best_adj
                        best_adj = np.where(better, worst_w_adj, best_adj)
                        best_v = np.minimum(best_v, worst_w_v)
                        arg_w = np.where(better, wi, arg_w)
                        best_u = np.where(better, ui, best_u)
                        best_d = np.where(better, d_at, best_d)
                # crop the overlap rows
                sl = slice(lo_pad, best_adj.shape[0] - hi_pad)
                best_adj, best_v, arg_w, best_u, best_d = (a[sl] for a in (best_adj, best_v, arg_w, best_u, best_d))
                xm = xmesh[sl]
                keep = np.ones(best_adj.shape, dtype=bool)
                for c in xminus:
                    keep &= ~c.contains(xm)
                if keep.any():
                    points += int(keep.sum()) * int(np.prod(wshape))
                    worst_v = max(worst_v, float(np.where(keep, best_v, -np.inf).max()))
                    masked = np.where(keep, best_adj, -np.inf)
                    if spec.collect:
                        flat = masked.reshape(-1)
                        bad = np.flatnonzero(flat > spec.tolerance)
                        top = bad[np.argsort(-flat[bad])][:spec.collect]
                        xs = xm.reshape(-1, xm.shape[-1])
                        wflat = wmesh.reshape(-1, wmesh.shape[-1])
                        for t in top:
                            uu = cert.controller(xs[t]) if options is None else options[best_u.reshape(-1)[t]]
                            dd = float(best_d.reshape(-1)[t])
                            found.append({"x": xs[t].tolist(), "w": wflat[arg_w.reshape(-1)[t]].tolist(),
                                          "u": np.asarray(uu).tolist(), "value": float(flat[t]) - dd,
                                          "margin": dd, "score": float(flat[t])})
                    k = np.unravel_index(np.argmax(masked), masked.shape)
                    if masked[k] > worst_adj:
                        worst_adj = float(masked[k])
                        margin_at = float(best_d[k])
                        wpt = wmesh.reshape(-1, wmesh.shape[-1])[arg_w[k]]
                        if options is None:
                            upt = cert.controller(xm[k])
                        else:
                            upt = options[best_u[k]]
                        witness = {"x": xm[k].tolist(), "w": wpt.tolist(), "u": np.asarray(upt).tolist(),
                                   "value": float(best_adj[k] - best_d[k])}
                start = stop
    status, certified = _classify(worst_v, worst_adj, spec.tolerance)
    notes = []
    if options is not None:
        notes.append("input chosen per grid point from the finite set")
    if sampled:
        certified = False
        notes.append(f"internal inputs sampled ({sum(len(ws.mesh) for ws in w_sets)} points: box diagonal "
                     "plus seeded uniform draws); a pass here is not a proof")
    note = "; ".join(notes)
    return ConditionResult(name, status, certified, worst_v, worst_adj, margin_at, witness, points, note,
                           witnesses=_top(found, spec.collect))


def verify_local(cert: LocalCertificate, sub, grid: GridSpec | None = None) -> VerificationReport:
    """Check the local barrier conditions of ``cert`` for subsystem ``sub`` on a grid."""
    spec = grid or GridSpec()
    report = VerificationReport(cert.name or "local certificate")
    report.grid = {"state_step": spec.state_step, "inset": spec.inset, "tolerance": spec.tolerance,
                   "tau": spec.tau}
    b = cert.barrier
    for name in spec.conditions:
        if name == "alpha":
            res = _region_condition(name, cert.state_region, lambda x: cert.alpha(inf_norm(x)) - b(x), spec)
        elif name == "initial":
            res = _region_condition(name, cert.region_a, lambda x: b(x) - cert.eps_upper, spec)
        elif name == "unsafe":
            res = _region_condition(name, cert.region_b, lambda x: cert.eps_lower + spec.tau - b(x), spec)
        elif name == "decrease":
            res = _decrease_condition(cert, sub, spec)
            w_sets = _internal_sets(cert.internal_region, spec)
            report.grid["internal_step"] = [ws.spacing if ws.gridded else "sampled" for ws in w_sets]
        else:
            raise VerificationError(f"unknown condition {name!r}")
        report.conditions[name] = res
    return report


# ---------------------------------------------------------------- composition

@dataclass(eq=False)
class ComposedCertificate:
    locals: list
    phis: list
    eps1: float
    eps2: float
    gains: GainMatrix | None = None

    @property
    def n(self) -> int:
        return len(self.locals)


def compose(locals_: Sequence[LocalCertificate], phis: Sequence[KFn] | None = None,
            wiring=None, psi: KFn | float = DEFAULT_PSI) -> ComposedCertificate:
    """Composed certificate ``B(x) = max_i phi_i^-1(B_i(x_i))``.

    Raises ``SmallGainError`` if the gain matrix fails the cycle condition and
    ``LevelConditionError`` if ``max phi_i^-1(eps_upper_i) > max phi_i^-1(eps_lower_i)``.
    """
    locals_ = list(locals_)
    gains = gamma_matrix(locals_, wiring, psi)
    if not check_small_gain(gains):
        raise SmallGainError("small-gain condition fails for the certificate gains")
    if phis is None:
        phis = find_phi(gains)
    phis = list(phis)
    if len(phis) != len(locals_):
        raise VerificationError("one scaling function per certificate is required")
    eps1, eps2 = level_constants(locals_, phis)
    if eps1 > eps2:
        raise LevelConditionError(f"level condition fails: eps1 = {eps1:.6g} > eps2 = {eps2:.6g}")
    return ComposedCertificate(locals_, phis, eps1, eps2, gains)


def level_constants(locals_, phis) -> tuple[float, float]:
    cache: dict = {}
    eps1 = eps2 = -np.inf
    for c, phi in zip(locals_, phis):
        key = (id(c), id(phi))
        if key not in cache:
            inv = phi.inverse()
            cache[key] = (float(inv(c.eps_upper)), float(inv(c.eps_lower)))
        e1, e2 = cache[key]
        eps1, eps2 = max(eps1, e1), max(eps2, e2)
    return eps1, eps2


def eval_composed(c: ComposedCertificate, x) -> np.ndarray:
    """``max_i phi_i^-1(B_i(x_i))`` over the blocks of ``x`` (batched on leading axes)."""
    x = np.asarray(x, dtype=float)
    dims = [cert.barrier.dim for cert in c.locals]
    if x.shape[-1] != sum(dims):
        raise VerificationError(f"state has dimension {x.shape[-1]}, expected {sum(dims)}")
    same = len({id(l) for l in c.locals}) == 1 and len({id(p) for p in c.phis}) == 1
    if same:
        n = dims[0]
        blocks = x.reshape(x.shape[:-1] + (c.n, n))
        vals = c.phis[0].inverse()(c.locals[0].barrier(blocks))
        return np.max(vals, axis=-1)
    out = np.full(x.shape[:-1], -np.inf)
    off = 0
    for cert, phi, n in zip(c.locals, c.phis, dims):
        out = np.maximum(out, phi.inverse()(cert.barrier(x[..., off:off + n])))
        off += n
    return out


def composed_kappa(c: ComposedCertificate):
    """``r -> max_ij phi_i^-1 o gamma_ij o phi_j (r)`` from the gain matrix."""
    seen: dict = {}
    for (i, j), g in c.gains.entries.items():
        if isinstance(g, Zero):
            continue
        key = (id(c.phis[i]), id(g), id(c.phis[j]))
        if key not in seen:
            seen[key] = compose_all([c.phis[i].inverse(), g, c.phis[j]])
    fns = list(seen.values())

    def kappa(r):
        r = np.asarray(r, dtype=float)
        return np.max(np.stack([np.broadcast_to(f(r), r.shape) for f in fns]), axis=0)
    kappa.parts = fns
    return kappa


def check_decrease_composed(c: ComposedCertificate, sys, policy, samples: int = 10_000,
                            seed: int = 0, tolerance: float = 1e-6, region: Box | None = None,
                            batch: int = 1000) -> VerificationReport:
    """Sampled check of ``B(f(x, u(x))) <= kappa(B(x))`` on random states."""
    from .system import step_interconnected, network_state_region

    rng = np.random.default_rng(seed)
    box = region or network_state_region(sys).bounding_box()
    kappa = composed_kappa(c)
    worst, witness, done = -np.inf, {}, 0
    while done < samples:
        m = min(batch, samples - done)
        x = rng.uniform(box.lo, box.hi, size=(m, box.dim))
        u = policy(x)
        xn = step_interconnected(sys, x, u)
        v = eval_composed(c, xn) - kappa(eval_composed(c, x))
        k = int(np.argmax(v))
        if v[k] > worst:
            worst = float(v[k])
            witness = {"sample": done + k, "B_x": float(eval_composed(c, x[k])),
                       "B_next": float(eval_composed(c, xn[k]))}
        done += m
    status = "pass" if worst <= tolerance else "fail"
    res = ConditionResult("composed_decrease", status, False, worst, worst, 0.0, witness, samples,
                          f"sampled only ({samples} random states, seed {seed})")
    report = VerificationReport("composed certificate", {"composed_decrease": res},
                                {"samples": samples, "seed": seed, "tolerance": tolerance})
    return report
