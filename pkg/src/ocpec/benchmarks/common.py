"""Building blocks shared by the benchmark problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from ..problem import StageFunction

Array = np.ndarray


@dataclass(frozen=True)
class QuadraticCostSpec:
    """Diagonal weights of the tracking cost.

    Stage cost ``(x - x_ref)^T Q_x (x - x_ref) + tau^T Q_tau tau + p^T Q_p p``,
    terminal cost ``(x - x_e)^T Q_T (x - x_e)``.  ``x_ref`` is ``None``
    (meaning ``x_e``), a constant vector, or a callable ``t -> (len(t), n_x)``.
    """

    Q_T: Array
    Q_x: Array
    Q_tau: Array
    Q_p: Array
    x_e: Array
    x_ref: Union[None, Array, Callable[[Array], Array]] = None

    def __post_init__(self):
        for name in ("Q_T", "Q_x", "Q_tau", "Q_p", "x_e"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("Q_T", "Q_x", "Q_tau", "Q_p"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"{name} diagonal must be positive")
        if self.Q_T.size != self.x_e.size or self.Q_x.size != self.x_e.size:
            raise ValueError("Q_T, Q_x and x_e must have the same length")
        if self.x_ref is not None and not callable(self.x_ref):
            ref = np.asarray(self.x_ref, dtype=float).reshape(-1)
            if ref.size != self.x_e.size:
                raise ValueError("x_ref has the wrong length")
            object.__setattr__(self, "x_ref", ref)

    def check(self, n_x: int, n_tau: int, n_p: int):
        if (self.x_e.size, self.Q_tau.size, self.Q_p.size) != (n_x, n_tau, n_p):
            raise ValueError(
                f"cost weights sized ({self.x_e.size}, {self.Q_tau.size}, {self.Q_p.size}), "
                f"system is ({n_x}, {n_tau}, {n_p})")

    def reference(self, t: Array) -> Array:
        t = np.asarray(t, dtype=float)
        if self.x_ref is None:
            return np.broadcast_to(self.x_e, (t.size, self.x_e.size))
        if callable(self.x_ref):
            return np.asarray(self.x_ref(t), dtype=float).reshape(t.size, self.x_e.size)
        return np.broadcast_to(self.x_ref, (t.size, self.x_e.size))


def linear_reference(x_start, x_end, T: float) -> Callable[[Array], Array]:
    """Reference that interpolates linearly from ``x_start`` at 0 to ``x_end`` at ``T``."""
    a = np.asarray(x_start, dtype=float)
    b = np.asarray(x_end, dtype=float)

    def ref(t):
        th = np.clip(np.asarray(t, dtype=float) / T, 0.0, 1.0)[:, None]
        return (1 - th) * a + th * b

    return ref


def quadratic_cost_pieces(spec: QuadraticCostSpec, n_x: int, n_tau: int, n_p: int):
    """Stage and terminal cost pieces in ``v = (x, tau, p)``."""
    spec.check(n_x, n_tau, n_p)
    W = np.concatenate([spec.Q_x, spec.Q_tau, spec.Q_p])
    k = W.size

    def offset(t):
        off = np.zeros((np.size(t), k))
        off[:, :n_x] = spec.reference(t)
        return off

    def value(v, t):
        d = v - offset(t)
        return np.sum(W * d * d, axis=1, keepdims=True)

    def jac(v, t):
        return (2.0 * W * (v - offset(t)))[:, None, :]

    def hess(v, t, mult):
        return mult[:, 0, None, None] * np.diag(2.0 * W)[None]

    WT = np.zeros(k)
    WT[:n_x] = spec.Q_T
    xe = np.zeros(k)
    xe[:n_x] = spec.x_e

    def t_value(v, t):
        d = v - xe
        return np.sum(WT * d * d, axis=1, keepdims=True)

    def t_jac(v, t):
        return (2.0 * WT * (v - xe))[:, None, :]

    def t_hess(v, t, mult):
        return mult[:, 0, None, None] * np.diag(2.0 * WT)[None]

    return (StageFunction(value, jac, hess, size=1),
            StageFunction(t_value, t_jac, t_hess, size=1))


def box_piece(index: Array, lower: Array, upper: Array, k: int) -> StageFunction:
    """``G(v) >= 0`` rows ``[v_i - lo_i ; hi_i - v_i]`` over the finite bounds, lower rows first."""
    index = np.asarray(index, dtype=int)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), index.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), index.shape)
    rows = []  # (component, sign, bound)
    for i, lo in zip(index, lower):
        if np.isfinite(lo):
            rows.append((i, 1.0, lo))
    for i, hi in zip(index, upper):
        if np.isfinite(hi):
            rows.append((i, -1.0, hi))
    comp = np.array([r[0] for r in rows], dtype=int)
    sign = np.array([r[1] for r in rows])
    bound = np.array([r[2] for r in rows])
    J = np.zeros((len(rows), k))
    J[np.arange(len(rows)), comp] = sign

    def value(v, t):
        return sign * (v[:, comp] - bound)

    def jac(v, t):
        return np.broadcast_to(J, (v.shape[0],) + J.shape).copy()

    return StageFunction(value, jac, None, size=len(rows))


def linear_piece(M: Array, c: Optional[Array] = None) -> StageFunction:
    """Affine map ``v -> M v + c``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float)

    def value(v, t):
        return v @ M.T + c

    def jac(v, t):
        return np.broadcast_to(M, (v.shape[0],) + M.shape).copy()

    return StageFunction(value, jac, None, size=M.shape[0])
