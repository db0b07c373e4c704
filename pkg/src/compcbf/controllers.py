"""Stationary per-subsystem controllers and their network-wide application."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .comparison import KFn
from .polynomial import Polynomial


def inf_norm(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[-1] == 0:
        return np.zeros(w.shape[:-1])
    return np.max(np.abs(w), axis=-1)


class Controller:
    """Maps a block state ``(..., n)`` to an input ``(..., m)``."""

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(eq=False)
class PolynomialController(Controller):
    polys: tuple
    clamp: Callable | None = None

    def __call__(self, x):
        u = np.stack([p(x) for p in self.polys], axis=-1)
        return u if self.clamp is None else self.clamp(u)

    def to_json(self):
        return {"polynomial": [p.to_json() for p in self.polys]}


@dataclass(eq=False)
class ConstantController(Controller):
    value: np.ndarray

    def __call__(self, x):
        x = np.asarray(x)
        return np.broadcast_to(np.asarray(self.value, dtype=float), x.shape[:-1] + (np.size(self.value),)).copy()


@dataclass(eq=False)
class DeterminizedController(Controller):
    """Smallest finite input meeting the additive decrease bound at a fixed ``w*``.

    ``u(x) = min{u in U : B(f(x, u, w*)) <= kappa_hat(B(x)) + gamma_hat(|w*|)}``
    with inputs ordered ascending.  When no input qualifies, the input with
    the smallest excess is used and the event is counted in ``fallbacks``.
    """

    barrier: Polynomial
    kappa_hat: KFn
    gamma_hat: KFn
    inputs: np.ndarray
    w_star: np.ndarray
    step_at_w: Callable
    fallbacks: int = field(default=0)
    calls: int = field(default=0)

    @classmethod
    def for_subsystem(cls, barrier, kappa_hat, gamma_hat, subsystem, w_star=None, step_at_w=None):
        if not subsystem.inputs.is_finite:
            raise ValueError("the determinized rule needs a finite input set")
        if w_star is None:
            w_star = subsystem.internal_region.bounding_box().center()
        w_star = np.asarray(w_star, dtype=float).reshape(-1)
        if w_star.size == 1 and subsystem.internal_dim > 1:
            w_star = np.full(subsystem.internal_dim, w_star[0])
        if step_at_w is None:
            f = subsystem.transition

            def step_at_w(x, u, _w=w_star):
                shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
                return f(x, u, np.broadcast_to(_w, shape + _w.shape))
        return cls(barrier, kappa_hat, gamma_hat, subsystem.inputs.values, w_star, step_at_w)

    def scores(self, x):
        """Excess ``B(f(x, u_k, w*)) - rhs(x)`` for every input, shape ``(..., K)``."""
        x = np.asarray(x, dtype=float)
        rhs = self.kappa_hat(self.barrier(x)) + self.gamma_hat(float(inf_norm(self.w_star)))
        cols = []
        for u in self.inputs:
            ub = np.broadcast_to(u, x.shape[:-1] + u.shape)
            cols.append(self.barrier(self.step_at_w(x, ub)) - rhs)
        return np.stack(cols, axis=-1)

    def __call__(self, x):
        s = self.scores(x)
        ok = s <= 0.0
        first = np.argmax(ok, axis=-1)
        none = ~ok.any(axis=-1)
        idx = np.where(none, np.argmin(s, axis=-1), first)
        self.calls += int(np.size(idx))
        self.fallbacks += int(np.count_nonzero(none))
        return self.inputs[idx]


@dataclass(eq=False)
class NetworkController:
    """Per-subsystem controllers applied block by block to a full network state."""

    system: object
    controllers: Sequence

    def __post_init__(self):
        if callable(self.controllers):
            self.controllers = [self.controllers] * self.system.n
        if len(self.controllers) != self.system.n:
            raise ValueError("one controller per subsystem is required")
        same = len({id(c) for c in self.controllers}) == 1
        self._shared = self.controllers[0] if same and self.system.homogeneous_dim() else None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self._shared is not None:
            n = self.system.homogeneous_dim()
            blocks = x.reshape(x.shape[:-1] + (self.system.n, n))
            u = self._shared(blocks)
            return u.reshape(x.shape[:-1] + (-1,))
        parts = [c(self.system.block(x, i)) for i, c in enumerate(self.controllers)]
        return np.concatenate(parts, axis=-1)
