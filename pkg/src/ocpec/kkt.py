"""Smooth Fischer-Burmeister mapping of the KKT conditions and its linearization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import Array, DiscretizedOCPEC, Dimensions, EvaluatorError, _call

# dual-infeasibility scaling threshold
S_MAX = 100.0


class Layout:
    """Index map of one stage block ``Y_n = (sigma, eta, lam, gamma, x, tau, p, w)``.

    Residual rows use the same order: FB(sigma, G), C, dynamics defect,
    FB(gamma, Phi), then the Hamiltonian gradient w.r.t. ``Z_n``.
    """

    def __init__(self, dims: Dimensions):
        self.dims = dims
        sizes = [
            ("sigma", dims.n_sigma), ("eta", dims.n_eta), ("lam", dims.n_x),
            ("gamma", dims.n_gamma), ("x", dims.n_x), ("tau", dims.n_tau),
            ("p", dims.n_p), ("w", dims.n_w),
        ]
        start = 0
        self.slices = {}
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.n_Y = start
        self.sigma = self.slices["sigma"]
        self.eta = self.slices["eta"]
        self.lam = self.slices["lam"]
        self.gamma = self.slices["gamma"]
        self.x = self.slices["x"]
        self.Z = slice(self.x.start, self.n_Y)
        self.duals = slice(0, self.x.start)
        self.eq = slice(self.eta.start, self.lam.stop)  # (eta, lam) block


class Iterate:
    """Primal-dual point stored stage-wise as an ``(N, n_Y)`` array.

    No sign constraints are imposed on any component.
    """

    def __init__(self, dims: Dimensions, data: Optional[Array] = None):
        self.dims = dims
        self.layout = Layout(dims)
        if data is None:
            data = np.zeros((dims.N, dims.n_Y))
        data = np.array(data, dtype=float).reshape(dims.N, dims.n_Y)
        self.data = data

    @classmethod
    def from_parts(cls, dims, sigma=None, eta=None, lam=None, gamma=None, Z=None):
        it = cls(dims)
        lay = it.layout
        for name, value in (("sigma", sigma), ("eta", eta), ("lam", lam), ("gamma", gamma)):
            if value is not None:
                it.data[:, lay.slices[name]] = value
        if Z is not None:
            it.data[:, lay.Z] = Z
        return it

    def copy(self) -> "Iterate":
        return Iterate(self.dims, self.data.copy())

    def step(self, alpha: float, direction: Array) -> "Iterate":
        return Iterate(self.dims, self.data + alpha * direction)

    def __repr__(self):
        return f"Iterate(N={self.dims.N}, n_Y={self.dims.n_Y})"

    def _get(self, name):
        return self.data[:, self.layout.slices[name]]

    sigma = property(lambda self: self._get("sigma"))
    eta = property(lambda self: self._get("eta"))
    lam = property(lambda self: self._get("lam"))
    gamma = property(lambda self: self._get("gamma"))
    x = property(lambda self: self._get("x"))
    tau = property(lambda self: self._get("tau"))
    p = property(lambda self: self._get("p"))
    w = property(lambda self: self._get("w"))

    @property
    def Z(self) -> Array:
        return self.data[:, self.layout.Z]


# ---------------------------------------------------------------------------
# smooth Fischer-Burmeister function
# ---------------------------------------------------------------------------


def fb(a, b, z):
    """``sqrt(a^2 + b^2 + z^2) - a - b``; zero iff ``a, b >= 0`` and ``ab = z^2/2``."""
    return np.sqrt(a * a + b * b + z * z) - a - b


def fb_grad(a, b, z):
    """Partial derivatives ``(d psi/da, d psi/db)``, each in ``[-2, 0]``.

    At the nonsmooth point ``a = b = z = 0`` returns ``(-1, -1)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.sqrt(a * a + b * b + z * z)
    safe = r > 0
    rs = np.where(safe, r, 1.0)
    da = np.where(safe, a / rs - 1.0, -1.0)
    db = np.where(safe, b / rs - 1.0, -1.0)
    if da.ndim == 0:
        return float(da), float(db)
    return da, db


def _fb_parts(a, b, z, nu_G):
    """FB value, Newton-row scaling and diagonal block entry.

    ``inv`` is the inverse of the regularized ``d psi/db`` so that the scaled
    residual row is ``-inv * psi``; ``diag`` is the matching ``D_n``/``E_n``
    entry ``-(a - r - nu_G) / (b - r - nu_G)``.
    """
    r = np.sqrt(a * a + b * b + z * z)
    psi = r - a - b
    den = b - r - nu_G
    if np.any(den == 0):
        raise np.linalg.LinAlgError("singular FB scaling: need z > 0 or nu_G > 0")
    inv = r / den
    diag = -(a - r - nu_G) / den
    return psi, inv, diag


# ---------------------------------------------------------------------------
# evaluation of stage quantities
# ---------------------------------------------------------------------------


@dataclass
class StageValues:
    """Function values at one point (no derivatives)."""

    cost: Array  # (N,)
    G: Array
    C: Array
    F: Array
    defect: Array  # x_{n-1} + F_n
    Phi: Array
    psi_G: Array
    psi_Phi: Array

    @property
    def total_cost(self) -> float:
        return float(self.cost.sum())

    def violation(self) -> Array:
        """Per-stage l1 constraint violation ``M_n``."""
        return (np.abs(self.psi_G).sum(axis=1) + np.abs(self.C).sum(axis=1)
                + np.abs(self.defect).sum(axis=1) + np.abs(self.psi_Phi).sum(axis=1))


def previous_states(problem: DiscretizedOCPEC, x: Array) -> Array:
    """Stack ``x_{n-1}`` for ``n = 1..N`` using the fixed initial state."""
    return np.vstack([problem.x0[None, :], x[:-1]])


def evaluate_values(problem: DiscretizedOCPEC, Y: Iterate, s: float, z: float) -> StageValues:
    Z = Y.Z
    G = _call("ineq", problem.ineq.value, Z)
    C = _call("eq", problem.eq.value, Z)
    F = _call("dyn", problem.dyn.value, Z)
    cost = _call("cost", problem.cost.value, Z).reshape(-1)
    Phi = problem.phi(Z, s)
    return StageValues(
        cost=cost, G=G, C=C, F=F,
        defect=previous_states(problem, Y.x) + F,
        Phi=Phi,
        psi_G=fb(Y.sigma, G, z),
        psi_Phi=fb(Y.gamma, Phi, z),
    )


@dataclass
class StageJacobians:
    cost_grad: Array
    G: Array
    C: Array
    F: Array
    Phi: Array


def evaluate_jacobians(problem: DiscretizedOCPEC, Y: Iterate) -> StageJacobians:
    Z = Y.Z
    return StageJacobians(
        cost_grad=_call("cost_gradient", problem.cost.gradient, Z),
        G=_call("ineq_jacobian", problem.ineq.jacobian, Z),
        C=_call("eq_jacobian", problem.eq.jacobian, Z),
        F=_call("dyn_jacobian", problem.dyn.jacobian, Z),
        Phi=problem.phi_jacobian(Z),
    )


def hamiltonian_gradient(problem: DiscretizedOCPEC, Y: Iterate, jac: StageJacobians) -> Array:
    """``nabla_Z H_n^T`` plus ``lam_{n+1}`` in the state rows (``lam_{N+1} = 0``)."""
    grad = (jac.cost_grad
            - np.einsum("nij,ni->nj", jac.G, Y.sigma)
            + np.einsum("nij,ni->nj", jac.C, Y.eta)
            + np.einsum("nij,ni->nj", jac.F, Y.lam)
            - np.einsum("nij,ni->nj", jac.Phi, Y.gamma))
    n_x = problem.dims.n_x
    grad[:-1, :n_x] += Y.lam[1:]
    return grad


# ---------------------------------------------------------------------------
# residual and matrix
# ---------------------------------------------------------------------------


@dataclass
class KKTResidual:
    """Stage blocks ``T_n`` stacked as ``(N, n_Y)`` plus the FB row scalings used."""

    data: Array
    inv_G: Array  # -inv * psi gives the scaled FB row
    inv_Phi: Array
    layout: Layout

    @property
    def flat(self) -> Array:
        return self.data.reshape(-1)

    def norm_inf(self) -> float:
        return _inf_norm(self.data)


@dataclass
class KKTMatrix:
    """Block-tridiagonal KKT matrix.

    Only the diagonal blocks ``J_n`` are stored.  The couplers are implicit:
    the dynamics-defect rows of stage ``n`` see ``+I`` on ``x_{n-1}`` and,
    symmetrically, the state-gradient rows of stage ``n`` see ``+I`` on
    ``lam_{n+1}``.
    """

    J: Array  # (N, n_Y, n_Y)
    layout: Layout

    @property
    def N(self) -> int:
        return self.J.shape[0]

    def coupler(self) -> Array:
        """``B_L`` as a dense ``n_Y x n_Y`` block (``B_U`` is its transpose)."""
        lay = self.layout
        B = np.zeros((lay.n_Y, lay.n_Y))
        B[lay.lam, lay.x] = np.eye(lay.dims.n_x)
        return B

    def to_dense(self) -> Array:
        N, nY = self.J.shape[:2]
        K = np.zeros((N * nY, N * nY))
        B = self.coupler()
        for n in range(N):
            sl = slice(n * nY, (n + 1) * nY)
            K[sl, sl] = self.J[n]
            if n > 0:
                K[sl, (n - 1) * nY:n * nY] = B
                K[(n - 1) * nY:n * nY, sl] = B.T
        return K

    def matvec(self, dY: Array) -> Array:
        lay = self.layout
        dY = np.asarray(dY).reshape(self.J.shape[0], lay.n_Y)
        out = np.einsum("nij,nj->ni", self.J, dY)
        out[1:, lay.lam] += dY[:-1, lay.x]
        out[:-1, lay.x] += dY[1:, lay.lam]
        return out


def _inf_norm(a) -> float:
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


@dataclass
class KKTPoint:
    """Everything the Newton iteration needs at one iterate."""

    Y: Iterate
    s: float
    z: float
    values: StageValues
    jac: StageJacobians
    grad: Array  # Hamiltonian gradient rows
    residual: KKTResidual
    matrix: Optional[KKTMatrix]
    diag_G: Array
    diag_Phi: Array

    @property
    def primal_inf(self) -> float:
        return primal_infeasibility(self.values)

    @property
    def dual_inf(self) -> float:
        return _inf_norm(self.grad) / dual_scaling(self.Y)

    @property
    def violation(self) -> float:
        return float(self.values.violation().sum())


def primal_infeasibility(v: StageValues) -> float:
    return max(_inf_norm(v.psi_G), _inf_norm(v.C), _inf_norm(v.defect), _inf_norm(v.psi_Phi))


def dual_scaling(Y: Iterate) -> float:
    duals = Y.data[:, Y.layout.duals]
    if duals.size == 0:
        return 1.0
    mean = np.abs(duals).sum() / duals.size
    return max(S_MAX, mean) / S_MAX


def linearize(problem: DiscretizedOCPEC, Y: Iterate, s: float, z: float,
              nu_J: float, nu_G: float, with_matrix: bool = True) -> KKTPoint:
    lay = Y.layout
    values = evaluate_values(problem, Y, s, z)
    jac = evaluate_jacobians(problem, Y)
    grad = hamiltonian_gradient(problem, Y, jac)
    psi_G, inv_G, diag_G = _fb_parts(Y.sigma, values.G, z, nu_G)
    psi_P, inv_P, diag_P = _fb_parts(Y.gamma, values.Phi, z, nu_G)

    T = np.empty((problem.dims.N, lay.n_Y))
    T[:, lay.sigma] = -inv_G * psi_G
    T[:, lay.eta] = values.C
    T[:, lay.lam] = values.defect
    T[:, lay.gamma] = -inv_P * psi_P
    T[:, lay.Z] = grad
    residual = KKTResidual(T, inv_G, inv_P, lay)

    matrix = None
    if with_matrix:
        hess = _call("hessian", problem.hamiltonian_hessian, Y.Z, Y.sigma, Y.eta, Y.lam, Y.gamma)
        matrix = _assemble(lay, diag_G, diag_P, jac, hess, nu_J)
    return KKTPoint(Y, s, z, values, jac, grad, residual, matrix, diag_G, diag_P)


def _assemble(lay: Layout, diag_G, diag_P, jac: StageJacobians, hess, nu_J) -> KKTMatrix:
    d = lay.dims
    J = np.zeros((d.N, lay.n_Y, lay.n_Y))
    iS = np.arange(lay.sigma.start, lay.sigma.stop)
    iG = np.arange(lay.gamma.start, lay.gamma.stop)
    iE = np.arange(lay.eq.start, lay.eq.stop)
    J[:, iS, iS] = diag_G
    J[:, iG, iG] = diag_P
    J[:, iE, iE] = -nu_J
    Z = lay.Z
    J[:, lay.sigma, Z] = -jac.G
    J[:, lay.eta, Z] = jac.C
    J[:, lay.lam, Z] = jac.F
    J[:, lay.gamma, Z] = -jac.Phi
    J[:, Z, lay.duals] = np.swapaxes(J[:, lay.duals, Z], 1, 2)
    J[:, Z, Z] = hess
    return KKTMatrix(J, lay)


def eval_kkt_residual(problem, Y: Iterate, s: float, z: float, nu_G: float) -> KKTResidual:
    return linearize(problem, Y, s, z, nu_J=0.0, nu_G=nu_G, with_matrix=False).residual


def assemble_kkt_blocks(problem, Y: Iterate, s: float, z: float, nu_J: float, nu_G: float) -> KKTMatrix:
    return linearize(problem, Y, s, z, nu_J, nu_G).matrix


def eval_infeasibilities(problem, Y: Iterate, s: float, z: float) -> tuple:
    """``(primal_inf, dual_inf)`` as used by the termination test."""
    values = evaluate_values(problem, Y, s, z)
    grad = hamiltonian_gradient(problem, Y, evaluate_jacobians(problem, Y))
    return primal_infeasibility(values), _inf_norm(grad) / dual_scaling(Y)


def original_residual(problem, Y: Iterate, s: float, z: float) -> Array:
    """Unscaled KKT residual: ``Psi_G, C, defect, Psi_Phi`` and the Hamiltonian gradient."""
    values = evaluate_values(problem, Y, s, z)
    grad = hamiltonian_gradient(problem, Y, evaluate_jacobians(problem, Y))
    return np.concatenate([values.psi_G, values.C, values.defect, values.psi_Phi, grad], axis=1)


def dump_kkt(path, residual: KKTResidual, matrix: Optional[KKTMatrix] = None) -> None:
    """Write ``T`` (and optionally the diagonal blocks) as text, one stage per record."""
    with open(path, "w") as fh:
        for n in range(residual.data.shape[0]):
            fh.write(f"# stage {n + 1}\n")
            fh.write("T " + " ".join(repr(float(v)) for v in residual.data[n]) + "\n")
            if matrix is not None:
                for row in matrix.J[n]:
                    fh.write("J " + " ".join(repr(float(v)) for v in row) + "\n")
