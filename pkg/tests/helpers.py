"""Small problem builders shared by several test modules."""
import numpy as np

from ocpec.benchmarks.common import box_piece, linear_piece
from ocpec.problem import BoundData, StageFunction, make_discretized


def quad_cost(k, weights=None, center=None):
    W = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
    c = np.zeros(k) if center is None else np.asarray(center, dtype=float)
    return StageFunction(
        lambda v, t: np.sum(W * (v - c) ** 2, axis=1, keepdims=True),
        lambda v, t: (2 * W * (v - c))[:, None, :],
        lambda v, t, m: m[:, 0, None, None] * np.diag(2 * W)[None],
        size=1,
    )


def tiny_problem(N=2, nonlinear=True, bounds=(-1.0, 1.0), dt=0.1):
    """All dimensions one: x' = -x + tau + p (+ 0.3 sin x), K = x + p, box on tau."""

    def f_val(v, t):
        out = -v[:, 0] + v[:, 1] + v[:, 2]
        if nonlinear:
            out = out + 0.3 * np.sin(v[:, 0])
        return out[:, None]

    def f_jac(v, t):
        J = np.zeros((v.shape[0], 1, 3))
        J[:, 0, 0] = -1 + (0.3 * np.cos(v[:, 0]) if nonlinear else 0)
        J[:, 0, 1] = 1
        J[:, 0, 2] = 1
        return J

    def f_hess(v, t, m):
        H = np.zeros((v.shape[0], 3, 3))
        if nonlinear:
            H[:, 0, 0] = -0.3 * np.sin(v[:, 0]) * m[:, 0]
        return H

    f = StageFunction(f_val, f_jac, f_hess, size=1)
    K = linear_piece([[1.0, 0.0, 1.0]])
    G = box_piece([1], [-3.0], [3.0], 3)
    return make_discretized(f=f, K=K, stage_cost=quad_cost(3, [1.0, 0.1, 0.1]), terminal_cost=quad_cost(3, [5, 0, 0]),
                            G=G, C=None, bounds=BoundData([bounds[0]], [bounds[1]]), N=N, dt=dt,
                            x0=[0.5], n_tau=1, name="tiny")


def circle_problem():
    """N = 1, no state, controls (a, b): minimize -a subject to a^2 + b^2 = 1."""
    empty = StageFunction(lambda v, t: np.zeros((v.shape[0], 0)),
                          lambda v, t: np.zeros((v.shape[0], 0, 2)), None, size=0)
    cost = StageFunction(lambda v, t: (-v[:, 0])[:, None],
                         lambda v, t: np.tile([[-1.0, 0.0]], (v.shape[0], 1))[:, None, :],
                         lambda v, t, m: np.zeros((v.shape[0], 2, 2)), size=1)
    circ = StageFunction(lambda v, t: (v[:, 0] ** 2 + v[:, 1] ** 2 - 1)[:, None],
                         lambda v, t: (2 * v)[:, None, :],
                         lambda v, t, m: m[:, 0, None, None] * 2 * np.eye(2)[None], size=1)
    return make_discretized(f=empty, K=empty, stage_cost=cost, terminal_cost=None, G=None, C=circ,
                            bounds=BoundData([], []), N=1, dt=1.0, x0=np.zeros(0), n_tau=2,
                            name="circle")


def random_dims(rng, N):
    from ocpec.problem import Dimensions
    n_x = int(rng.integers(0, 4))
    n_p = int(rng.integers(0, 3))
    return Dimensions(n_x=n_x, n_tau=int(rng.integers(0, 3)), n_p=n_p, n_sigma=int(rng.integers(0, 4)),
                      n_eta=n_p + int(rng.integers(0, 2)), n_gamma=4 * n_p, N=N, dt=0.1)


def random_kkt(rng, dims, kind="general"):
    """Random block-tridiagonal matrix with the solver's coupling structure.

    ``general``: symmetric Gaussian blocks.  ``kkt``: the saddle-point shape of
    the Newton matrix with an SPD Hessian, negative FB diagonals, -nu_J on the
    equality block and full-row-rank equality Jacobians.
    """
    from ocpec.kkt import KKTMatrix, Layout
    lay = Layout(dims)
    N, nY = dims.N, lay.n_Y
    if kind == "general":
        A = rng.normal(size=(N, nY, nY))
        J = A + np.swapaxes(A, 1, 2)
        return KKTMatrix(J, lay)
    nZ = dims.n_Z
    J = np.zeros((N, nY, nY))
    for n in range(N):
        M = rng.normal(size=(nZ, nZ))
        J[n][lay.Z, lay.Z] = M @ M.T + 0.5 * np.eye(nZ)
        duals = np.arange(lay.duals.stop)
        for sl in (lay.sigma, lay.gamma):
            idx = np.arange(sl.start, sl.stop)
            J[n][idx, idx] = -rng.uniform(0.1, 5.0, idx.size)
        idx = np.arange(lay.eq.start, lay.eq.stop)
        J[n][idx, idx] = -1e-7
        rows = rng.normal(size=(duals.size, nZ))
        # dynamics rows: -I on the own state keeps them independent
        rows[lay.lam, :dims.n_x] = -np.eye(dims.n_x) + 0.1 * rng.normal(size=(dims.n_x, dims.n_x))
        J[n][lay.duals, lay.Z] = rows
        J[n][lay.Z, lay.duals] = rows.T
    return KKTMatrix(J, lay)
