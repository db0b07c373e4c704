"""Subsystems, their interconnection, labeling functions and the two network builders.

Arrays follow one convention throughout: the last axis is the vector
dimension and any leading axes are batch axes, so a transition can be
evaluated on a whole grid of points at once.  A full network state is a flat
vector of length ``sum(state_dim)``.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .automata import TOP
from .regions import Box, Region, region_union

TWO_PI = 2.0 * math.pi


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InputSpec:
    """Either a finite input set (``values`` of shape ``(K, m)``) or a box."""

    values: np.ndarray | None = None
    box: Box | None = None

    def __post_init__(self):
        if (self.values is None) == (self.box is None):
            raise ModelError("an input spec is either finite or a box")
        if self.values is not None:
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim == 1:
                vals = vals[:, None]
            if vals.shape[0] == 0:
                raise ModelError("finite input set is empty")
            order = np.lexsort(vals.T[::-1])
            object.__setattr__(self, "values", vals[order])

    @classmethod
    def finite(cls, values) -> "InputSpec":
        return cls(values=np.asarray(values, dtype=float))

    @classmethod
    def interval(cls, lo, hi) -> "InputSpec":
        return cls(box=Box.from_bounds([[lo, hi]]))

    @property
    def is_finite(self) -> bool:
        return self.values is not None

    @property
    def dim(self) -> int:
        return self.values.shape[1] if self.is_finite else self.box.dim

    def clamp(self, u):
        """Project onto the input set (nearest finite value or box clip)."""
        u = np.asarray(u, dtype=float)
        if self.is_finite:
            d = np.abs(u[..., None, :] - self.values).sum(axis=-1)
            return self.values[np.argmin(d, axis=-1)]
        return np.clip(u, self.box.lo, self.box.hi)

    def default(self) -> np.ndarray:
        """Zero clamped into the set (smallest value for finite sets without zero)."""
        zero = np.zeros(self.dim)
        if self.is_finite:
            hit = np.all(self.values == 0.0, axis=1)
            return self.values[np.argmax(hit)] if hit.any() else self.values[0]
        return np.clip(zero, self.box.lo, self.box.hi)

    def to_json(self):
        if self.is_finite:
            return {"finite": self.values.tolist()}
        return {"box": self.box.bounds()}

    @classmethod
    def from_json(cls, obj) -> "InputSpec":
        if "finite" in obj:
            return cls.finite(obj["finite"])
        if "box" in obj:
            return cls(box=Box.from_bounds(obj["box"]))
        if "range" in obj:
            lo, hi, step = obj["range"]
            count = int(round((hi - lo) / step)) + 1
            return cls.finite(np.round(lo + step * np.arange(count), 12))
        raise ModelError(f"unrecognized input spec {obj!r}")


@dataclass(eq=False)
class Subsystem:
    """``x+ = transition(x, u, w)`` with output ``y = output(x)`` (identity by default)."""

    state_dim: int
    internal_dim: int
    inputs: InputSpec
    transition: Callable
    state_region: Region
    internal_region: Region
    output: Callable | None = None
    output_dim: int | None = None
    name: str = ""
    # optional factory: w_star -> (x, u) -> x+ with the internal input frozen at w_star
    reference_step: Callable | None = None

    def __post_init__(self):
        if self.output_dim is None:
            self.output_dim = self.state_dim

    def observe(self, x):
        return x if self.output is None else self.output(x)


def step_subsystem(s: Subsystem, x, u, w):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape[-1] != s.state_dim or u.shape[-1] != s.inputs.dim or w.shape[-1] != s.internal_dim:
        raise ModelError(
            f"dimension mismatch: x {x.shape[-1]}/{s.state_dim}, u {u.shape[-1]}/{s.inputs.dim}, "
            f"w {w.shape[-1]}/{s.internal_dim}")
    return s.transition(x, u, w)


@dataclass(eq=False)
class InterconnectedSystem:
    """Subsystems wired by ``w_i = (y_j for j in neighbors[i])``.

    ``fast_step(x, u)`` optionally replaces the generic gather-and-step loop
    with a vectorized update that must agree with it.
    """

    subsystems: list
    neighbors: list
    fast_step: Callable | None = None
    name: str = ""
    check_ranges: bool = True

    def __post_init__(self):
        n = len(self.subsystems)
        if len(self.neighbors) != n:
            raise ModelError("one neighbor list per subsystem is required")
        for i, (s, nb) in enumerate(zip(self.subsystems, self.neighbors)):
            if i in nb:
                raise ModelError(f"subsystem {i} lists itself as a neighbor")
            width = sum(self.subsystems[j].output_dim for j in nb)
            if width != s.internal_dim:
                raise ModelError(f"subsystem {i}: neighbors provide {width} internal inputs, expected {s.internal_dim}")
        self.offsets = np.concatenate([[0], np.cumsum([s.state_dim for s in self.subsystems])]).astype(int)
        if self.check_ranges:
            self._check_ranges()

    def _check_ranges(self):
        # outputs of j must land inside the matching coordinates of W_i
        shared_x = {id(s.state_region) for s in self.subsystems}
        shared_w = {id(s.internal_region) for s in self.subsystems}
        identity = all(s.output is None for s in self.subsystems)
        if identity and len(shared_x) == 1 and len(shared_w) == 1:
            xb = self.subsystems[0].state_region.bounding_box()
            wb = self.subsystems[0].internal_region.bounding_box()
            if wb.dim == 0 or (wb.lo.max() <= xb.lo.min() and wb.hi.min() >= xb.hi.max()):
                return
        for i, (s, nb) in enumerate(zip(self.subsystems, self.neighbors)):
            wb = s.internal_region.bounding_box() if s.internal_dim else None
            pos = 0
            for j in nb:
                sj = self.subsystems[j]
                if sj.output is not None:
                    pos += sj.output_dim
                    continue
                xb = sj.state_region.bounding_box()
                sl = slice(pos, pos + sj.output_dim)
                if np.any(wb.lo[sl] > xb.lo) or np.any(wb.hi[sl] < xb.hi):
                    raise ModelError(f"output range of subsystem {j} is not contained in the internal-input range of subsystem {i}")
                pos += sj.output_dim

    @property
    def n(self) -> int:
        return len(self.subsystems)

    @property
    def state_dim(self) -> int:
        return int(self.offsets[-1])

    @property
    def input_dim(self) -> int:
        return sum(s.inputs.dim for s in self.subsystems)

    def wiring(self):
        """Ordered pairs ``(i, j)`` such that subsystem j feeds subsystem i."""
        return [(i, j) for i, nb in enumerate(self.neighbors) for j in nb]

    def block(self, x, i):
        return np.asarray(x)[..., self.offsets[i]:self.offsets[i + 1]]

    def blocks(self, x) -> list:
        return [self.block(x, i) for i in range(self.n)]

    def homogeneous_dim(self) -> int | None:
        dims = {s.state_dim for s in self.subsystems}
        return dims.pop() if len(dims) == 1 else None

    def internal_inputs(self, x, i):
        parts = [self.subsystems[j].observe(self.block(x, j)) for j in self.neighbors[i]]
        if not parts:
            return np.zeros(np.shape(x)[:-1] + (0,))
        return np.concatenate(parts, axis=-1)


def step_generic(sys: InterconnectedSystem, x, u):
    """Synchronous update: gather all internal inputs, then step every block."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != sys.state_dim:
        raise ModelError(f"state has dimension {x.shape[-1]}, expected {sys.state_dim}")
    u_off = np.concatenate([[0], np.cumsum([s.inputs.dim for s in sys.subsystems])]).astype(int)
    if u.shape[-1] != u_off[-1]:
        raise ModelError(f"input has dimension {u.shape[-1]}, expected {u_off[-1]}")
    ws = [sys.internal_inputs(x, i) for i in range(sys.n)]
    out = [step_subsystem(s, sys.block(x, i), u[..., u_off[i]:u_off[i + 1]], ws[i])
           for i, s in enumerate(sys.subsystems)]
    return np.concatenate(out, axis=-1)


def step_interconnected(sys: InterconnectedSystem, x, u):
    if sys.fast_step is not None:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1] != sys.state_dim or u.shape[-1] != sys.input_dim:
            raise ModelError("state or input dimension mismatch")
        return sys.fast_step(x, u)
    return step_generic(sys, x, u)


# ---------------------------------------------------------------- labeling

@dataclass(eq=False)
class LabelingFunction:
    """Priority-ordered ``(prop, region)`` list with an optional catch-all proposition."""

    entries: list
    state_region: Region
    else_prop: str | None = None

    def __post_init__(self):
        self.entries = [(p, r) for p, r in self.entries]
        self.props = [p for p, _ in self.entries] + ([self.else_prop] if self.else_prop else [])
        if len(set(self.props)) != len(self.props):
            raise ModelError("duplicate proposition in labeling")

    def label(self, x) -> str:
        x = np.asarray(x, dtype=float)
        for p, r in self.entries:
            if r.contains(x):
                return p
        if self.else_prop is None:
            raise ModelError("state is not covered by any labelled region")
        return self.else_prop

    def labels(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = np.full(xs.shape[:-1], None, dtype=object)
        free = np.ones(xs.shape[:-1], dtype=bool)
        for p, r in self.entries:
            hit = free & r.contains(xs)
            out[hit] = p
            free &= ~hit
        if free.any():
            if self.else_prop is None:
                raise ModelError("state is not covered by any labelled region")
            out[free] = self.else_prop
        return out

    def region_of(self, prop: str) -> Region:
        """Exact preimage of a proposition under first-match priority."""
        if prop == TOP:
            return self.state_region
        earlier = []
        for p, r in self.entries:
            if p == prop:
                return Region(tuple((b, m + tuple(earlier)) for b, m in r.parts))
            earlier.extend(r.boxes)
        if prop == self.else_prop:
            return Region(tuple((b, m + tuple(earlier)) for b, m in self.state_region.parts))
        raise ModelError(f"unknown proposition {prop!r}")

    def region_of_props(self, props) -> Region:
        return region_union(self.region_of(p) for p in props)


# ---------------------------------------------------------------- room network

@dataclass(frozen=True)
class RoomParams:
    alpha: float = 5e-2
    alpha_e: float = 8e-3
    alpha_h: float = 3.6e-3
    t_e: float = 15.0
    t_h: float = 55.0
    x_lo: float = 0.0
    x_hi: float = 45.0
    u_lo: float = 0.0
    u_hi: float = 1.0


def room_transition(p: RoomParams):
    def f(x, u, w):
        a = 1.0 - 2.0 * p.alpha - p.alpha_e - p.alpha_h * u
        return a * x + p.alpha * w.sum(axis=-1, keepdims=True) + p.alpha_e * p.t_e + p.alpha_h * p.t_h * u
    return f


def build_room_network(n: int, params: RoomParams | None = None):
    """Ring of ``n`` rooms; room i exchanges heat with rooms i-1 and i+1."""
    if n < 3:
        raise ModelError("the room ring needs n >= 3")
    p = params or RoomParams()
    xr = Region.of(Box.cube(p.x_lo, p.x_hi, 1))
    wr = Region.of(Box.cube(p.x_lo, p.x_hi, 2))
    sub = Subsystem(1, 2, InputSpec.interval(p.u_lo, p.u_hi), room_transition(p), xr, wr, name="room")
    neighbors = [[(i - 1) % n, (i + 1) % n] for i in range(n)]

    def fast(x, u):
        a = 1.0 - 2.0 * p.alpha - p.alpha_e - p.alpha_h * u
        nb = np.roll(x, 1, axis=-1) + np.roll(x, -1, axis=-1)
        return a * x + p.alpha * nb + p.alpha_e * p.t_e + p.alpha_h * p.t_h * u

    sys = InterconnectedSystem([sub] * n, neighbors, fast_step=fast, name="rooms")
    lab = LabelingFunction(
        [("p0", Region.of(Box.cube(20.5, 22.5, n))),
         ("p1", Region.of(Box.cube(0.0, 20.0, n))),
         ("p2", Region.of(Box.cube(23.0, 45.0, n)))],
        Region.of(Box.cube(p.x_lo, p.x_hi, n)),
        else_prop="p3")
    return sys, lab


def room_monolithic_step(x, u, p: RoomParams | None = None):
    """Dense-matrix form ``A(u) x + alpha_e T_E + alpha_h T_h u``; used as a test oracle."""
    p = p or RoomParams()
    n = x.shape[-1]
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = p.alpha
    a[np.arange(n), np.arange(n)] = 1.0 - 2.0 * p.alpha - p.alpha_e - p.alpha_h * u
    return a @ x + p.alpha_e * p.t_e + p.alpha_h * p.t_h * u


# ---------------------------------------------------------------- Kuramoto network

@dataclass(frozen=True)
class KuramotoParams:
    coupling: float = 1.0
    tau: float = 0.2
    omega: float = 1.0
    u_values: tuple = tuple(np.round(np.arange(-6, 7) / 10.0, 12))


KURAMOTO_REGIONS = (
    ("p0", 0.0, math.pi / 3),
    ("p1", 5 * math.pi / 12, 7 * math.pi / 12),
    ("p2", 2 * math.pi / 3, math.pi),
    ("p3", math.pi, 4 * math.pi / 3),
    ("p4", 17 * math.pi / 12, 19 * math.pi / 12),
    ("p5", 5 * math.pi / 3, TWO_PI),
)


def kuramoto_transition(n: int, p: KuramotoParams):
    gain = p.tau * p.coupling / n

    def f(x, u, w):
        coupling = np.sin(w - x).sum(axis=-1, keepdims=True)
        return np.mod(x + p.tau * p.omega + gain * coupling + u, TWO_PI)
    return f


def kuramoto_step_at(n: int, p: KuramotoParams, w_star):
    """Oscillator update with the other phases frozen at ``w_star`` (O(1) per call)."""
    w_star = np.asarray(w_star, dtype=float)
    big_s, big_c = float(np.sin(w_star).sum()), float(np.cos(w_star).sum())
    gain = p.tau * p.coupling / n

    def f(x, u):
        return np.mod(x + p.tau * p.omega + gain * (big_s * np.cos(x) - big_c * np.sin(x)) + u, TWO_PI)
    return f


def build_kuramoto_network(n: int, params: KuramotoParams | None = None):
    """All-to-all coupled phase oscillators with phases kept in ``[0, 2 pi)``."""
    if n < 2:
        raise ModelError("the oscillator network needs n >= 2")
    p = params or KuramotoParams()
    xr = Region.of(Box.cube(0.0, TWO_PI, 1))
    wr = Region.of(Box.cube(0.0, TWO_PI, n - 1))
    sub = Subsystem(1, n - 1, InputSpec.finite(np.asarray(p.u_values)), kuramoto_transition(n, p), xr, wr,
                    name="oscillator", reference_step=lambda w_star: kuramoto_step_at(n, p, w_star))
    neighbors = [[j for j in range(n) if j != i] for i in range(n)]
    gain = p.tau * p.coupling / n

    def fast(x, u):
        # sum_j sin(x_j - x_i) = S cos(x_i) - C sin(x_i)
        s = np.sin(x)
        c = np.cos(x)
        big_s = s.sum(axis=-1, keepdims=True)
        big_c = c.sum(axis=-1, keepdims=True)
        return np.mod(x + p.tau * p.omega + gain * (big_s * c - big_c * s) + u, TWO_PI)

    sys = InterconnectedSystem([sub] * n, neighbors, fast_step=fast, name="kuramoto")
    lab = LabelingFunction(
        [(name, Region.of(Box.cube(lo, hi, n))) for name, lo, hi in KURAMOTO_REGIONS],
        Region.of(Box.cube(0.0, TWO_PI, n)),
        else_prop="p6")
    return sys, lab


def kuramoto_monolithic_step(x, u, p: KuramotoParams | None = None):
    """Dense pairwise form of the oscillator update; used as a test oracle."""
    p = p or KuramotoParams()
    n = x.shape[-1]
    phi = np.sin(x[None, :] - x[:, None]).sum(axis=1)
    return np.mod(x + p.tau * p.omega + p.tau * p.coupling / n * phi + u, TWO_PI)


# ---------------------------------------------------------------- expression systems

_ALLOWED_FUNCS = {"sin": np.sin, "cos": np.cos}


class _Compiler(ast.NodeVisitor):
    """Checks an expression against the small grammar and records symbols."""

    def __init__(self):
        self.symbols = set()

    def generic_visit(self, node):
        raise ModelError(f"unsupported syntax in expression: {ast.dump(node)}")

    def visit_Expression(self, node):
        self.visit(node.body)

    def visit_BinOp(self, node):
        if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
            raise ModelError("only + - * / ** are allowed")
        if isinstance(node.op, ast.Pow) and not (isinstance(node.right, ast.Constant)
                                                 and isinstance(node.right.value, int)):
            raise ModelError("exponents must be integer constants")
        self.visit(node.left)
        self.visit(node.right)

    def visit_UnaryOp(self, node):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ModelError("only unary +/- are allowed")
        self.visit(node.operand)

    def visit_Call(self, node):
        if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS) or len(node.args) != 1 or node.keywords:
            raise ModelError("only sin(.) and cos(.) calls are allowed")
        self.visit(node.args[0])

    def visit_Name(self, node):
        if node.id in ("pi",):
            return
        if node.id[:1] not in ("x", "u", "w") or not node.id[1:].isdigit():
            raise ModelError(f"unknown symbol {node.id!r} (use x0, u0, w0, ... or pi)")
        self.symbols.add(node.id)

    def visit_Constant(self, node):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ModelError("only numeric constants are allowed")


def compile_transition(exprs: Sequence[str], state_dim: int, input_dim: int, internal_dim: int):
    """Vectorized transition from one expression per state coordinate."""
    if len(exprs) != state_dim:
        raise ModelError(f"need {state_dim} transition expressions, got {len(exprs)}")
    codes = []
    limits = {"x": state_dim, "u": input_dim, "w": internal_dim}
    for text in exprs:
        tree = ast.parse(text, mode="eval")
        checker = _Compiler()
        checker.visit(tree)
        for sym in checker.symbols:
            if int(sym[1:]) >= limits[sym[0]]:
                raise ModelError(f"symbol {sym} is out of range")
        codes.append(compile(tree, "<transition>", "eval"))

    def f(x, u, w):
        env = {"__builtins__": {}, "pi": math.pi, **_ALLOWED_FUNCS}
        for d in range(state_dim):
            env[f"x{d}"] = x[..., d]
        for d in range(input_dim):
            env[f"u{d}"] = u[..., d]
        for d in range(internal_dim):
            env[f"w{d}"] = w[..., d]
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], w.shape[:-1])
        cols = [np.broadcast_to(np.asarray(eval(c, env), dtype=float), shape) for c in codes]
        return np.stack(cols, axis=-1)
    return f


def subsystem_from_json(obj: Mapping) -> Subsystem:
    state_dim = int(obj["state_dim"])
    internal_dim = int(obj.get("internal_dim", 0))
    inputs = InputSpec.from_json(obj["inputs"])
    f = compile_transition(obj["transition"], state_dim, inputs.dim, internal_dim)
    xr = Region.from_json(obj["state_region"])
    wr = Region.from_json(obj["internal_region"]) if internal_dim else Region.empty()
    return Subsystem(state_dim, internal_dim, inputs, f, xr, wr, name=obj.get("name", ""))


def system_from_json(obj: Mapping) -> InterconnectedSystem:
    """``{"subsystems": [...], "neighbors": [[...], ...]}``; a single subsystem may omit neighbors."""
    subs = [subsystem_from_json(s) for s in obj["subsystems"]]
    neighbors = obj.get("neighbors") or [[] for _ in subs]
    return InterconnectedSystem(subs, [list(nb) for nb in neighbors], name=obj.get("name", "custom"))


def labeling_from_json(obj: Mapping, state_region: Region) -> LabelingFunction:
    entries = [(e["prop"], Region.from_json(e["region"])) for e in obj["regions"]]
    return LabelingFunction(entries, state_region, else_prop=obj.get("else"))


def network_state_region(sys: InterconnectedSystem) -> Region:
    """Product of the subsystem state regions (bounding boxes)."""
    lo = np.concatenate([s.state_region.bounding_box().lo for s in sys.subsystems])
    hi = np.concatenate([s.state_region.bounding_box().hi for s in sys.subsystems])
    return Region.of(Box(lo, hi))
