"""Comparison functions (class-K and K-infinity) and gain-matrix reasoning.

Functions are represented symbolically so that composition and inversion stay
exact where a closed form exists:

* ``Identity``        r
* ``Linear(c)``       c * r
* ``Power(c, e)``     c * r**e
* ``Chain(parts)``    parts[0](parts[1](...parts[-1](r)))
* ``Zero``            the degenerate zero gain (used for absent couplings)

Comparisons against the identity are three-valued because they are not
always decidable on the symbolic form (e.g. ``Power(c, e)`` with ``e != 1``
crosses the identity unless a bounded domain is supplied).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

EXP_TOL = 1e-12
DEFAULT_PSI = 1.0 - 1e-9


class KFnError(ValueError):
    pass


class SmallGainError(ValueError):
    """Raised when the small-gain condition fails or cannot be decided."""


class UnsupportedGainClass(ValueError):
    pass


class Verdict(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"


class KFn:
    """Base class; subclasses are frozen dataclasses."""

    def __call__(self, r):
        raise NotImplementedError

    def inverse(self) -> "KFn":
        raise NotImplementedError

    def then(self, other: "KFn") -> "KFn":
        """Return ``other o self``."""
        return compose(other, self)

    def to_json(self):
        return kfn_to_json(self)


@dataclass(frozen=True)
class Zero(KFn):
    def __call__(self, r):
        return np.zeros_like(np.asarray(r, dtype=float)) if np.ndim(r) else 0.0

    def inverse(self) -> KFn:
        raise KFnError("the zero gain has no inverse")

    def __repr__(self):
        return "Zero()"


@dataclass(frozen=True)
class Identity(KFn):
    def __call__(self, r):
        return r

    def inverse(self) -> KFn:
        return self

    def __repr__(self):
        return "Identity()"


@dataclass(frozen=True)
class Linear(KFn):
    c: float

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise KFnError(f"Linear coefficient must be positive and finite, got {self.c}")

    def __call__(self, r):
        return self.c * r

    def inverse(self) -> KFn:
        return Linear(1.0 / self.c)


@dataclass(frozen=True)
class Power(KFn):
    c: float
    e: float

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise KFnError(f"Power coefficient must be positive and finite, got {self.c}")
        if not (self.e > 0 and math.isfinite(self.e)):
            raise KFnError(f"Power exponent must be positive and finite, got {self.e}")

    def __call__(self, r):
        return self.c * np.power(r, self.e)

    def inverse(self) -> KFn:
        return _normalize(self.c ** (-1.0 / self.e), 1.0 / self.e)


@dataclass(frozen=True)
class Chain(KFn):
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.parts:
            raise KFnError("Chain needs at least one part")

    def __call__(self, r):
        for f in reversed(self.parts):
            r = f(r)
        return r

    def inverse(self) -> KFn:
        return Chain(tuple(f.inverse() for f in reversed(self.parts)))


def _power_form(f: KFn) -> tuple[float, float] | None:
    if isinstance(f, Identity):
        return 1.0, 1.0
    if isinstance(f, Linear):
        return f.c, 1.0
    if isinstance(f, Power):
        return f.c, f.e
    return None


def _normalize(c: float, e: float) -> KFn:
    if abs(e - 1.0) <= EXP_TOL:
        return Identity() if c == 1.0 else Linear(c)
    return Power(c, e)


def compose(f: KFn, g: KFn) -> KFn:
    """Return ``f o g``, simplified when both have a power form."""
    if isinstance(f, Zero) or isinstance(g, Zero):
        return Zero()
    if isinstance(f, Identity):
        return g
    if isinstance(g, Identity):
        return f
    pf, pg = _power_form(f), _power_form(g)
    if pf is not None and pg is not None:
        (c1, e1), (c2, e2) = pf, pg
        # c1 * (c2 r^e2)^e1
        return _normalize(c1 * c2**e1, e1 * e2)
    left = f.parts if isinstance(f, Chain) else (f,)
    right = g.parts if isinstance(g, Chain) else (g,)
    return Chain(tuple(left) + tuple(right))


def compose_all(fns: Iterable[KFn]) -> KFn:
    """Compose left to right: ``compose_all([f, g, h]) = f o g o h``."""
    out: KFn = Identity()
    for f in fns:
        out = compose(out, f)
    return out


def inverse(f: KFn) -> KFn:
    return f.inverse()


def compare_identity(f: KFn, bound: float | None = None) -> tuple[Verdict, str]:
    """Decide whether ``f(r) < r`` for every ``r > 0`` (up to ``bound`` if given)."""
    if isinstance(f, Zero):
        return Verdict.TRUE, "zero gain"
    if isinstance(f, Chain):
        simplified = compose_all(f.parts)
        if not isinstance(simplified, Chain):
            return compare_identity(simplified, bound)
        if bound is None:
            return Verdict.UNKNOWN, "chain without closed form on an unbounded domain"
        return _sampled_compare(f, bound)
    c, e = _power_form(f)
    if abs(e - 1.0) <= EXP_TOL:
        return (Verdict.TRUE, f"slope {c!r} < 1") if c < 1.0 else (Verdict.FALSE, f"slope {c!r} >= 1")
    if bound is None:
        # c r^e - r changes sign at r* = c^(1/(1-e)) for any e != 1
        r_star = c ** (1.0 / (1.0 - e))
        return Verdict.FALSE, f"crosses the identity at r = {r_star:.6g}"
    # on (0, bound]: sub-identity iff c r^(e-1) < 1 everywhere
    if e > 1.0:
        ok = c * bound ** (e - 1.0) < 1.0
        return (Verdict.TRUE, "sub-identity on the bounded domain") if ok else (
            Verdict.FALSE, "exceeds the identity near the domain bound")
    return Verdict.FALSE, "exponent below one exceeds the identity near zero"


def _sampled_compare(f: KFn, bound: float) -> tuple[Verdict, str]:
    r = np.geomspace(bound * 1e-9, bound, 4001)
    vals = np.asarray(f(r), dtype=float)
    if np.all(vals < r):
        return Verdict.UNKNOWN, "sub-identity on samples only"
    return Verdict.FALSE, "exceeds the identity at a sampled point"


def less_than_identity(f: KFn, bound: float | None = None) -> Verdict:
    return compare_identity(f, bound)[0]


def max_form_conversion(kappa_hat: KFn, gamma_hat: KFn, psi: KFn | float = DEFAULT_PSI):
    """Convert an additive decrease bound into the equivalent max form.

    Given ``B(x+) <= kappa_hat(B(x)) + gamma_hat(|w|)`` returns
    ``(kappa, gamma_w)`` with ``B(x+) <= max(kappa(B(x)), gamma_w(|w|))`` where
    ``kappa = I - (I - psi) o (I - kappa_hat)`` and
    ``gamma_w = (I - kappa_hat)^-1 o psi^-1 o gamma_hat``.
    Only linear ``kappa_hat`` and ``psi`` are supported (the subtraction
    ``I - f`` has no closed form otherwise).
    """
    if not isinstance(psi, KFn):
        psi = Linear(float(psi))
    k = _linear_coeff(kappa_hat, "kappa_hat")
    p = _linear_coeff(psi, "psi")
    if not 0.0 <= k < 1.0:
        raise KFnError(f"kappa_hat must be below the identity, got slope {k}")
    if not 0.0 < p < 1.0:
        raise KFnError(f"psi must be below the identity, got slope {p}")
    kappa = Linear(1.0 - (1.0 - p) * (1.0 - k))
    if isinstance(gamma_hat, Zero):
        return kappa, Zero()
    gamma_w = compose(Linear(1.0 / ((1.0 - k) * p)), gamma_hat)
    return kappa, gamma_w


def _linear_coeff(f: KFn, name: str) -> float:
    if isinstance(f, Zero):
        return 0.0
    pf = _power_form(f)
    if pf is None or abs(pf[1] - 1.0) > EXP_TOL:
        raise KFnError(f"{name} must be linear for the max-form conversion, got {f!r}")
    return pf[0]


# ---------------------------------------------------------------- gain matrix

@dataclass
class GainMatrix:
    """Sparse n x n matrix of gains; ``entries[(i, j)]`` is gamma_ij (0-based).

    gamma_ij bounds the influence of subsystem j on subsystem i; the diagonal
    holds the local decay kappa_i.  Absent entries are the zero gain.
    """

    n: int
    entries: dict = field(default_factory=dict)

    def __getitem__(self, ij) -> KFn:
        return self.entries.get(ij, Zero())

    def edges(self):
        for (i, j), f in self.entries.items():
            if not isinstance(f, Zero):
                yield i, j, f

    def is_linear(self) -> bool:
        return all(isinstance(f, (Identity, Linear)) for _, _, f in self.edges())

    def log_weights(self) -> np.ndarray:
        """Dense ``n x n`` matrix of log slopes (``-inf`` where absent)."""
        w = np.full((self.n, self.n), -np.inf)
        for i, j, f in self.edges():
            w[i, j] = math.log(_power_form(f)[0])
        return w


def gamma_matrix(locals_, wiring: Iterable[tuple[int, int]] | None = None,
                 psi: KFn | float = DEFAULT_PSI) -> GainMatrix:
    """Assemble the gain matrix ``gamma_ii = kappa_i``, ``gamma_ij = gamma_wi o alpha_j^-1``.

    ``locals_`` are local certificates (anything with ``max_form(psi)`` and
    ``alpha``).  ``wiring`` lists the pairs ``(i, j)`` with j feeding i; by
    default every ordered pair is wired.
    """
    locals_ = list(locals_)
    n = len(locals_)
    forms = {}
    alpha_inv = {}
    for idx, cert in enumerate(locals_):
        key = id(cert)
        if key not in forms:
            forms[key] = cert.max_form(psi)
            alpha_inv[key] = cert.alpha.inverse()
    cache: dict = {}
    g = GainMatrix(n)
    for i, cert in enumerate(locals_):
        g.entries[(i, i)] = forms[id(cert)][0]
    pairs = ((i, j) for i in range(n) for j in range(n) if i != j) if wiring is None else wiring
    if len(forms) == 1 and n:
        # one shared certificate: every off-diagonal entry is the same function
        entry = compose(forms[id(locals_[0])][1], alpha_inv[id(locals_[0])])
        off = dict.fromkeys(pairs, entry)
        for i in range(n):
            off.pop((i, i), None)
        g.entries.update(off)
        return g
    for i, j in pairs:
        if i == j:
            continue
        ci, cj = locals_[i], locals_[j]
        key = (id(ci), id(cj))
        if key not in cache:
            cache[key] = compose(forms[id(ci)][1], alpha_inv[id(cj)])
        g.entries[(i, j)] = cache[key]
    return g


def max_cycle_mean(w: np.ndarray) -> float:
    """Maximum mean weight over all cycles of the weighted digraph ``w``.

    ``w[i, j]`` is the weight of edge i -> j (``-inf`` if absent).  Karp's
    recurrence over walks of every length; returns ``-inf`` if acyclic.
    """
    n = w.shape[0]
    d = np.empty((n + 1, n))
    d[0] = 0.0
    for k in range(1, n + 1):
        # d[k][v] = max_u d[k-1][u] + w[u, v]
        d[k] = np.max(d[k - 1][:, None] + w, axis=0)
    with np.errstate(invalid="ignore"):
        ks = np.arange(n)[:, None]
        ratios = (d[n][None, :] - d[:n]) / (n - ks)
    ratios = np.where(np.isfinite(d[:n]), ratios, np.inf)
    per_v = np.min(ratios, axis=0)
    per_v = np.where(np.isfinite(d[n]), per_v, -np.inf)
    return float(np.max(per_v)) if n else -np.inf


def _distinct(values) -> list:
    """Distinct objects (by identity) among ``values``; stops once all are found."""
    values = list(values)
    pending = set(map(id, values))
    out = []
    for f in values:
        if id(f) in pending:
            pending.discard(id(f))
            out.append(f)
            if not pending:
                break
    return out


def _all_sub_identity(g: GainMatrix, bound) -> bool:
    for f in _distinct(g.entries.values()):
        if not isinstance(f, Zero) and less_than_identity(f, bound) is not Verdict.TRUE:
            return False
    return True


def check_small_gain(g: GainMatrix, bound: float | None = None) -> bool:
    """True iff every cycle composition of the gain matrix is below the identity."""
    if _all_sub_identity(g, bound):
        return True
    if g.is_linear():
        return max_cycle_mean(g.log_weights()) < 0.0
    import networkx as nx

    graph = nx.DiGraph()
    graph.add_nodes_from(range(g.n))
    for i, j, _ in g.edges():
        graph.add_edge(i, j)
    for cycle in nx.simple_cycles(graph):
        f = compose_all(g[(cycle[k], cycle[(k + 1) % len(cycle)])] for k in range(len(cycle)))
        verdict, why = compare_identity(f, bound)
        if verdict is Verdict.FALSE:
            return False
        if verdict is Verdict.UNKNOWN:
            raise SmallGainError(f"cycle {[c + 1 for c in cycle]} cannot be compared with the identity: {why}")
    return True


def find_phi(g: GainMatrix, bound: float | None = None) -> list[KFn]:
    """Scaling functions phi_i with ``phi_i^-1 o gamma_ij o phi_j < I`` for every entry."""
    if not check_small_gain(g, bound):
        raise SmallGainError("small-gain condition fails")
    if _all_sub_identity(g, bound):
        return [Identity() for _ in range(g.n)]
    if not g.is_linear():
        raise UnsupportedGainClass("scaling synthesis supports linear gains or entries already below the identity")
    w = g.log_weights()
    lam = max_cycle_mean(w)
    shift = 1.0 if lam == -np.inf else -lam / 2.0
    w2 = w + shift
    # longest walk potentials p_i = max(0, max_j w2[i, j] + p_j); converges since all cycles are negative
    p = np.zeros(g.n)
    for _ in range(g.n + 1):
        p_new = np.maximum(0.0, np.max(w2 + p[None, :], axis=1))
        if np.array_equal(p_new, p):
            break
        p = p_new
    phis = [Identity() if pi == 0.0 else Linear(math.exp(pi)) for pi in p]
    for i, j, f in g.edges():
        scaled = compose_all([phis[i].inverse(), f, phis[j]])
        if less_than_identity(scaled) is not Verdict.TRUE:
            raise SmallGainError(f"scaling failed on entry ({i + 1}, {j + 1})")
    return phis


# ---------------------------------------------------------------- JSON

def kfn_to_json(f: KFn):
    if isinstance(f, Identity):
        return "identity"
    if isinstance(f, Zero):
        return "zero"
    if isinstance(f, Linear):
        return {"linear": f.c}
    if isinstance(f, Power):
        return {"power": [f.c, f.e]}
    if isinstance(f, Chain):
        return {"chain": [kfn_to_json(p) for p in f.parts]}
    raise KFnError(f"cannot serialize {f!r}")


def kfn_from_json(obj) -> KFn:
    if obj == "identity":
        return Identity()
    if obj == "zero":
        return Zero()
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return Linear(float(obj))
    if isinstance(obj, Mapping) and len(obj) == 1:
        (kind, val), = obj.items()
        if kind == "linear":
            return Linear(float(val))
        if kind == "power":
            c, e = val
            return Power(float(c), float(e))
        if kind == "chain":
            return Chain(tuple(kfn_from_json(v) for v in val))
    raise KFnError(f"unrecognized comparison function {obj!r}")
