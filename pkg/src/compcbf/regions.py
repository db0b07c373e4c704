"""Regions as finite unions of closed boxes, optionally minus other boxes.

This is enough to describe labelled regions such as ``[20.5, 22.5]^N`` or
"everything else" and to decide whether two regions intersect exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different dimensions")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> "Box":
        arr = np.asarray(bounds, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def dim(self) -> int:
        return self.lo.size

    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def bounds(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def project(self, idx) -> "Box":
        return Box(self.lo[idx], self.hi[idx])

    def __repr__(self):
        if self.dim > 4 and np.all(self.lo == self.lo[0]) and np.all(self.hi == self.hi[0]):
            return f"Box([{self.lo[0]:g}, {self.hi[0]:g}]^{self.dim})"
        return f"Box({self.bounds()})"


def _piece_empty(lo, hi, lo_open, hi_open) -> bool:
    return bool(np.any((lo > hi) | ((lo == hi) & (lo_open | hi_open))))


def _uncovered(box: Box, cutters: Sequence[Box]) -> bool:
    """True iff ``box`` is not covered by the union of the (closed) cutters."""
    n = box.dim
    return _uncovered_piece(box.lo, box.hi, np.zeros(n, bool), np.zeros(n, bool), tuple(cutters))


def _uncovered_piece(lo, hi, lo_open, hi_open, cutters) -> bool:
    # depth-first box subtraction; pieces may have open faces
    for idx, cut in enumerate(cutters):
        ilo = np.maximum(lo, cut.lo)
        ihi = np.minimum(hi, cut.hi)
        ilo_open = lo_open & (lo >= cut.lo)
        ihi_open = hi_open & (hi <= cut.hi)
        if _piece_empty(ilo, ihi, ilo_open, ihi_open):
            continue
        rest = cutters[idx + 1:]
        lo, hi = lo.copy(), hi.copy()
        lo_open, hi_open = lo_open.copy(), hi_open.copy()
        for d in range(lo.size):
            if lo[d] < cut.lo[d]:
                phi, pho = hi.copy(), hi_open.copy()
                phi[d], pho[d] = cut.lo[d], True
                if not _piece_empty(lo, phi, lo_open, pho) and _uncovered_piece(lo, phi, lo_open, pho, rest):
                    return True
            if cut.hi[d] < hi[d]:
                plo, plo_open = lo.copy(), lo_open.copy()
                plo[d], plo_open[d] = cut.hi[d], True
                if not _piece_empty(plo, hi, plo_open, hi_open) and _uncovered_piece(plo, hi, plo_open, hi_open, rest):
                    return True
            if cut.lo[d] > lo[d]:
                lo[d], lo_open[d] = cut.lo[d], False
            if cut.hi[d] < hi[d]:
                hi[d], hi_open[d] = cut.hi[d], False
        return False
    return True


@dataclass(frozen=True, eq=False)
class Region:
    """Finite union of parts, each a box minus a tuple of excluded boxes."""

    parts: tuple

    def __post_init__(self):
        parts = []
        for part in self.parts:
            box, minus = part if isinstance(part, tuple) else (part, ())
            if not box.is_empty():
                parts.append((box, tuple(minus)))
        object.__setattr__(self, "parts", tuple(parts))
        dims = {b.dim for b, m in self.parts for b in (b,) + m}
        if len(dims) > 1:
            raise ValueError(f"region mixes dimensions {sorted(dims)}")

    @classmethod
    def of(cls, *boxes: Box, minus: Sequence[Box] = ()) -> "Region":
        return cls(tuple((b, tuple(minus)) for b in boxes))

    @classmethod
    def empty(cls) -> "Region":
        return cls(())

    @property
    def boxes(self) -> tuple:
        return tuple(b for b, _ in self.parts)

    @classmethod
    def from_json(cls, obj) -> "Region":
        """``[[[lo, hi], ...], ...]`` (list of boxes), ``{"boxes": ..., "minus": ...}`` or a list of those."""
        if isinstance(obj, dict):
            minus = tuple(Box.from_bounds(b) for b in obj.get("minus", []))
            return cls.of(*(Box.from_bounds(b) for b in obj.get("boxes", [])), minus=minus)
        if any(isinstance(part, dict) for part in obj):
            return region_union(cls.from_json(part if isinstance(part, dict) else [part]) for part in obj)
        return cls.of(*(Box.from_bounds(b) for b in obj))

    def to_json(self):
        if all(not m for _, m in self.parts):
            return [b.bounds() for b in self.boxes]
        return [{"boxes": [b.bounds()], "minus": [c.bounds() for c in m]} for b, m in self.parts]

    @property
    def dim(self) -> int:
        return self.parts[0][0].dim if self.parts else 0

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape[:-1], dtype=bool)
        for b, minus in self.parts:
            here = b.contains(x)
            for c in minus:
                here &= ~c.contains(x)
            inside |= here
        return inside

    def union(self, other: "Region") -> "Region":
        return Region(self.parts + other.parts)

    def is_empty(self) -> bool:
        return not any(_uncovered(b, m) for b, m in self.parts)

    def intersects(self, other: "Region") -> bool:
        for a, ma in self.parts:
            for b, mb in other.parts:
                c = a.intersect(b)
                if c is not None and _uncovered(c, ma + mb):
                    return True
        return False

    def bounding_box(self) -> Box:
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return Box(lo, hi)

    def project(self, idx) -> "Region":
        """Projection onto coordinates ``idx``; exclusions are dropped (an outer bound)."""
        seen = []
        for b in self.boxes:
            p = b.project(idx)
            if not any(np.array_equal(p.lo, s.lo) and np.array_equal(p.hi, s.hi) for s in seen):
                seen.append(p)
        return Region.of(*seen)

    def __repr__(self):
        chunks = []
        for b, m in self.parts:
            chunks.append(repr(b) + (" minus " + ", ".join(repr(c) for c in m) if m else ""))
        return f"Region({' | '.join(chunks) or 'empty'})"


def region_union(regions: Iterable[Region]) -> Region:
    out = Region.empty()
    for r in regions:
        out = out.union(r)
    return out
