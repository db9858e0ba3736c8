"""Affine DVI with a bounded equilibrium variable."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..problem import BoundData, DiscretizedOCPEC, make_discretized
from .common import QuadraticCostSpec, box_piece, linear_piece, quadratic_cost_pieces

A = np.array([[1.0, -3.0], [-8.0, 10.0]])
B_TAU = np.array([[4.0], [8.0]])
B_P = np.array([[-3.0], [-1.0]])
K_X = np.array([[1.0, -3.0]])
K_TAU = 3.0
K_P = 5.0
X0 = np.array([-0.5, -1.0])
LOWER, UPPER = -1.0, 1.0


def default_affine_cost() -> QuadraticCostSpec:
    return QuadraticCostSpec(
        Q_T=[20.0, 20.0], Q_x=[20.0, 20.0], Q_tau=[1.0], Q_p=[0.1], x_e=[0.0, 0.0],
    )


def affine_dvi(N: int = 100, dt: float = 0.01, cost: Optional[QuadraticCostSpec] = None,
               box: Optional[dict] = None) -> DiscretizedOCPEC:
    """``box`` may override ``x_max`` (default 5) and ``tau_max`` (default 2)."""
    cost = cost or default_affine_cost()
    box = dict(box or {})
    x_max = float(box.pop("x_max", 5.0))
    tau_max = float(box.pop("tau_max", 2.0))
    if box:
        raise ValueError(f"unknown box keys: {sorted(box)}")
    # v = (x1, x2, tau, p)
    f = linear_piece(np.hstack([A, B_TAU, B_P]))
    K = linear_piece(np.hstack([K_X, [[K_TAU, K_P]]]))
    G = box_piece([0, 1, 2], [-x_max, -x_max, -tau_max], [x_max, x_max, tau_max], 4)
    stage, terminal = quadratic_cost_pieces(cost, 2, 1, 1)
    prob = make_discretized(
        f=f, K=K, stage_cost=stage, terminal_cost=terminal, G=G, C=None,
        bounds=BoundData([LOWER], [UPPER]), N=N, dt=dt, x0=X0, n_tau=1, name="affine_dvi",
    )
    prob.meta.update(cost=cost, x_max=x_max, tau_max=tau_max)
    return prob
