"""Multivariate polynomials in monomial form, evaluated with numpy broadcasting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Polynomial:
    """``sum_k coeffs[k] * prod_d x_d ** exponents[k][d]``."""

    coeffs: tuple
    exponents: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        exps = tuple(tuple(int(e) for e in row) for row in self.exponents)
        if len(coeffs) != len(exps):
            raise ValueError("one exponent row per coefficient is required")
        if len({len(r) for r in exps}) > 1:
            raise ValueError("exponent rows have different lengths")
        if any(e < 0 for r in exps for e in r):
            raise ValueError("negative exponents are not allowed")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def univariate(cls, coeffs_high_to_low: Sequence[float]) -> "Polynomial":
        """``univariate([a, b, c])`` is ``a x^2 + b x + c``."""
        deg = len(coeffs_high_to_low) - 1
        return cls(tuple(coeffs_high_to_low), tuple((deg - k,) for k in range(deg + 1)))

    @property
    def dim(self) -> int:
        return len(self.exponents[0]) if self.exponents else 0

    @property
    def degree(self) -> int:
        return max((sum(r) for r in self.exponents), default=0)

    def monomials(self, x) -> np.ndarray:
        """Matrix of monomial values, shape ``x.shape[:-1] + (terms,)``."""
        return monomial_matrix(x, self.exponents)

    def __call__(self, x) -> np.ndarray:
        return self.monomials(x) @ np.asarray(self.coeffs)

    def gradient_bound(self, box_lo, box_hi) -> float:
        """Crude bound on the 1-norm of the gradient over a box."""
        m = np.maximum(np.abs(np.asarray(box_lo, float)), np.abs(np.asarray(box_hi, float)))
        total = 0.0
        for c, row in zip(self.coeffs, self.exponents):
            for d, e in enumerate(row):
                if e == 0:
                    continue
                term = abs(c) * e
                for d2, e2 in enumerate(row):
                    term *= m[d2] ** (e2 - 1 if d2 == d else e2)
                total += term
        return total

    def to_json(self) -> dict:
        return {"coeffs": list(self.coeffs), "exponents": [list(r) for r in self.exponents]}

    @classmethod
    def from_json(cls, obj) -> "Polynomial":
        if isinstance(obj, list):
            return cls.univariate(obj)
        return cls(tuple(obj["coeffs"]), tuple(tuple(r) for r in obj["exponents"]))


def monomial_matrix(x, exponents) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    exps = np.asarray(exponents, dtype=int)
    if x.shape[-1] != exps.shape[1]:
        raise ValueError(f"polynomial expects dimension {exps.shape[1]}, got {x.shape[-1]}")
    out = np.ones(x.shape[:-1] + (exps.shape[0],))
    for d in range(exps.shape[1]):
        col = x[..., d:d + 1]
        powers = exps[:, d]
        if np.any(powers):
            out = out * np.power(col, powers)
    return out


def total_degree_exponents(dim: int, degree: int) -> list[tuple]:
    """All exponent rows of total degree at most ``degree``, highest degree first."""
    rows = []

    def rec(prefix, left):
        if len(prefix) == dim:
            rows.append(tuple(prefix))
            return
        for e in range(left, -1, -1):
            rec(prefix + [e], left - e)

    rec([], degree)
    return sorted(rows, key=lambda r: (-sum(r), [-e for e in r]))
