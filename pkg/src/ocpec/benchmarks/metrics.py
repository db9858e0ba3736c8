"""Solution-quality metrics, mode sequences and randomized starts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..kkt import Iterate, previous_states
from ..problem import BoundData, DiscretizedOCPEC

AT_LOWER = "at-lower"
INTERIOR = "interior"
AT_UPPER = "at-upper"


@dataclass
class SolutionMetrics:
    r_eq: float
    r_ineq: float
    r_comp: float
    cost: float

    def as_dict(self) -> dict:
        return {"r_eq": self.r_eq, "r_ineq": self.r_ineq, "r_comp": self.r_comp, "cost": self.cost}


def complementarity_violation(p, K, lower, upper, printed_form: bool = False) -> np.ndarray:
    """Elementwise ``max(r_l, r_u)`` for pairs ``(p, K)`` of a box VI.

    ``printed_form=True`` scales the upper side by ``min(1, max(0, l - p))``
    instead of the symmetric ``min(1, max(0, u - p))``.
    """
    p = np.asarray(p, dtype=float)
    K = np.asarray(K, dtype=float)
    with np.errstate(invalid="ignore"):
        l_vio = np.maximum(0.0, lower - p)
        l_sc = np.minimum(1.0, np.maximum(0.0, p - lower))
        r_l = np.maximum(l_vio, l_sc * np.maximum(K, 0.0))
        u_vio = np.maximum(0.0, p - upper)
        if printed_form:
            u_sc = np.minimum(1.0, np.maximum(0.0, lower - p))
        else:
            u_sc = np.minimum(1.0, np.maximum(0.0, upper - p))
        r_u = np.maximum(u_vio, u_sc * np.maximum(-K, 0.0))
    return np.maximum(r_l, r_u)


def evaluate_solution_metrics(problem: DiscretizedOCPEC, Z: np.ndarray,
                              bounds: Optional[BoundData] = None,
                              printed_form: bool = False) -> SolutionMetrics:
    bounds = bounds or problem.bounds
    x, _, p, _ = problem.split(Z)
    C = problem.eq.value(Z)
    defect = previous_states(problem, x) + problem.dyn.value(Z)
    r_eq = max(np.abs(C).max(initial=0.0), np.abs(defect).max(initial=0.0))

    G = problem.ineq.value(Z)
    pieces = [np.zeros((Z.shape[0], 1)), G]
    lo, hi = bounds.lower, bounds.upper
    fl, fu = np.isfinite(lo), np.isfinite(hi)
    pieces.append(p[:, fl] - lo[fl])
    pieces.append(hi[fu] - p[:, fu])
    r_ineq = max(0.0, float(-np.concatenate(pieces, axis=1).min()))

    r_comp = 0.0
    if problem.dims.n_p:
        K = problem.vi_values(Z)
        r_comp = float(complementarity_violation(p, K, lo, hi, printed_form).max())
    cost = float(problem.cost.value(Z).sum())
    return SolutionMetrics(float(r_eq), r_ineq, r_comp, cost)


@dataclass
class ModeInterval:
    mode: tuple  # one label per equilibrium component
    start: float
    end: float


def default_mode_tolerance(bounds: BoundData) -> np.ndarray:
    width = bounds.upper - bounds.lower
    return np.where(np.isfinite(width), 1e-3 * width, 1e-3)


def classify_modes(p: np.ndarray, bounds: BoundData, tol_mode=None) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    tol = default_mode_tolerance(bounds) if tol_mode is None else np.broadcast_to(tol_mode, bounds.lower.shape)
    labels = np.full(p.shape, INTERIOR, dtype=object)
    labels[p >= bounds.upper - tol] = AT_UPPER
    labels[p <= bounds.lower + tol] = AT_LOWER
    return labels


def extract_mode_sequence(p, w, bounds: BoundData, tol_mode=None, dt: float = 1.0) -> List[ModeInterval]:
    """Merge per-knot mode labels into intervals.

    Knot ``n`` (1-based) sits at ``t = n dt``; the first interval starts at 0
    and each interval ends at the time of its last knot, except the last which
    ends at ``N dt``.  ``w`` is accepted for symmetry with the trajectory data
    but only ``p`` decides the mode.
    """
    p = np.asarray(p, dtype=float)
    if w is not None and np.shape(w) != np.shape(p):
        raise ValueError("p and w trajectories differ in shape")
    labels = classify_modes(p, bounds, tol_mode)
    N = labels.shape[0]
    out: List[ModeInterval] = []
    start = 0.0
    for n in range(N):
        mode = tuple(labels[n])
        if out and out[-1].mode == mode:
            out[-1].end = (n + 1) * dt
            continue
        if out:
            start = out[-1].end
        out.append(ModeInterval(mode, start, (n + 1) * dt))
    return out


def switch_times(intervals: List[ModeInterval]) -> List[float]:
    return [iv.end for iv in intervals[:-1]]


def random_initial_guess(problem: DiscretizedOCPEC, seed: int, range: float = 1.0) -> Iterate:
    """Uniform primals in ``[-range, range]``, inequality duals in ``(0, 1]``, zero equality duals."""
    if range < 0:
        raise ValueError("range must be nonnegative")
    rng = np.random.default_rng(seed)
    Y = Iterate(problem.dims)
    lay = Y.layout
    Y.data[:, lay.Z] = rng.uniform(-range, range, size=Y.Z.shape)
    for sl in (lay.sigma, lay.gamma):
        shape = Y.data[:, sl].shape
        Y.data[:, sl] = 1.0 - rng.random(shape)  # (0, 1]
    return Y
