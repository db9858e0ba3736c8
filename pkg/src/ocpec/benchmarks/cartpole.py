"""Cart-pole with Coulomb friction between cart and ground.

The friction force ``p`` acts on the cart and satisfies a box VI with
``K = xdot_c``: ``p`` sits at ``-mu F_N`` while the cart slides right, at
``+mu F_N`` while it slides left, and strictly inside while it sticks.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import Optional

import numpy as np
import sympy as sp

from ..problem import BoundData, DiscretizedOCPEC, StageFunction, make_discretized
from .common import QuadraticCostSpec, box_piece, linear_piece, quadratic_cost_pieces


@dataclass(frozen=True)
class CartPoleParams:
    m_cart: float = 1.0
    m_pole: float = 0.1
    length: float = 1.0
    gravity: float = 9.81
    mu: float = 0.1
    x_max: float = 5.0
    theta_max: float = 2 * np.pi
    v_max: float = 10.0
    omega_max: float = 15.0
    tau_max: float = 30.0

    @property
    def friction_bound(self) -> float:
        return self.mu * (self.m_cart + self.m_pole) * self.gravity


def default_cartpole_cost() -> QuadraticCostSpec:
    return QuadraticCostSpec(
        Q_T=[100.0, 100.0, 10.0, 10.0], Q_x=[1.0, 1.0, 0.1, 0.1], Q_tau=[0.1], Q_p=[0.1],
        x_e=[0.0, np.pi, 0.0, 0.0],
    )


def _batched(exprs, syms, shape):
    """Lambdify a list of expressions into ``v -> (N,) + shape`` with constant entries broadcast."""
    fns = [sp.lambdify(syms, e, "numpy") for e in exprs]

    def call(v):
        cols = [v[:, i] for i in range(v.shape[1])]
        out = np.empty((v.shape[0], len(fns)))
        for j, fn in enumerate(fns):
            out[:, j] = fn(*cols)
        return out.reshape((v.shape[0],) + shape)

    return call


@lru_cache(maxsize=8)
def _dynamics(m_c, m_p, l, g):
    xc, th, dxc, dth, tau, p = sp.symbols("x_c theta xdot_c thetadot tau p", real=True)
    v = [xc, th, dxc, dth, tau, p]
    s, c = sp.sin(th), sp.cos(th)
    F = tau + p
    den = m_c + m_p * s ** 2
    ddx = (F + m_p * s * (l * dth ** 2 + g * c)) / den
    ddth = (-F * c - m_p * l * dth ** 2 * c * s - (m_c + m_p) * g * s) / (l * den)
    f = sp.Matrix([dxc, dth, ddx, ddth])
    J = f.jacobian(v)
    k = len(v)
    value = _batched(list(f), v, (4,))
    jac = _batched(list(J), v, (4, k))
    hess_parts = [_batched(list(sp.hessian(fi, v)), v, (k, k)) for fi in f]

    def hess(vv, t, mult):
        H = np.zeros((vv.shape[0], k, k))
        for i, h in enumerate(hess_parts):
            H += mult[:, i, None, None] * h(vv)
        return H

    return value, jac, hess


def cartpole_dynamics(params: CartPoleParams) -> StageFunction:
    value, jac, hess = _dynamics(params.m_cart, params.m_pole, params.length, params.gravity)
    return StageFunction(lambda v, t: value(v), lambda v, t: jac(v), hess, size=4)


def cartpole_friction(N: int = 400, dt: float = 0.01, cost: Optional[QuadraticCostSpec] = None,
                      params: Optional[CartPoleParams] = None) -> DiscretizedOCPEC:
    params = params or CartPoleParams()
    if min(params.m_cart, params.m_pole, params.length, params.gravity) <= 0 or params.mu <= 0:
        raise ValueError("masses, length, gravity and mu must be positive")
    cost = cost or default_cartpole_cost()
    f = cartpole_dynamics(params)
    # v = (x_c, theta, xdot_c, thetadot, tau, p); K is the sliding velocity
    K = linear_piece(np.array([[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]]))
    lim = np.array([params.x_max, params.theta_max, params.v_max, params.omega_max, params.tau_max])
    G = box_piece(np.arange(5), -lim, lim, 6)
    stage, terminal = quadratic_cost_pieces(cost, 4, 1, 1)
    fb = params.friction_bound
    prob = make_discretized(
        f=f, K=K, stage_cost=stage, terminal_cost=terminal, G=G, C=None,
        bounds=BoundData([-fb], [fb]), N=N, dt=dt, x0=np.zeros(4), n_tau=1,
        name="cartpole_friction",
    )
    prob.meta.update(cost=cost, params=asdict(params))
    return prob
