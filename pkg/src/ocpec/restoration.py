"""Feasibility restoration: proximity-regularized feasibility NLP plus equality-dual recovery."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lstsq

from .globalization import MeritState, constraint_violation, newton_step
from .kkt import Iterate
from .options import SolverOptions
from .problem import DiscretizedOCPEC, StageCost, _call

RESTORED = "restored"
FAILED = "failed"


def proximity_scaling(Z_ref: np.ndarray, nu_sc: float) -> np.ndarray:
    """``nu_sc * min(1, 1/|Z_ref|)`` elementwise (zero entries map to ``nu_sc``)."""
    a = np.abs(Z_ref)
    inv = np.divide(1.0, a, out=np.full_like(a, np.inf), where=a > 0)
    return nu_sc * np.minimum(1.0, inv)


@dataclass
class RestorationProblem:
    problem: DiscretizedOCPEC  # same constraints, proximity cost
    Z_ref: np.ndarray
    scaling: np.ndarray


def build_restoration(problem: DiscretizedOCPEC, Y_start: Iterate, nu_sc: float = 1e-6) -> RestorationProblem:
    Z_ref = np.array(Y_start.Z, copy=True)
    D = proximity_scaling(Z_ref, nu_sc)
    n = Z_ref.shape[1]
    idx = np.arange(n)

    def value(Z):
        d = Z - Z_ref
        return 0.5 * np.sum(D * d * d, axis=1)

    def gradient(Z):
        return D * (Z - Z_ref)

    def hessian(Z):
        H = np.zeros((Z.shape[0], n, n))
        H[:, idx, idx] = D
        return H

    frp = problem.with_cost(StageCost(value, gradient, hessian), name=f"{problem.name}-restoration")
    return RestorationProblem(frp, Z_ref, D)


@dataclass
class RestorationOutcome:
    Y: Iterate
    status: str
    iterations: int
    M_start: float
    M_end: float
    # (s, z, soc_attempted) per inner iteration, for telemetry
    inner: list = field(default_factory=list)

    @property
    def restored(self) -> bool:
        return self.status == RESTORED


def recover_equality_duals(problem: DiscretizedOCPEC, Z: np.ndarray, sigma: np.ndarray,
                           gamma: np.ndarray, lambda_max: float = 1000.0):
    """Backward stage sweep of minimum-norm least squares for ``(eta_n, lam_n)``.

    Solves ``[dC_n^T dF_n^T] (eta_n; lam_n) = -B_n`` where ``B_n`` collects the
    cost gradient, the inequality and equilibrium terms and ``lam_{n+1}``.
    If any entry reaches ``lambda_max``, all of ``eta`` and ``lam`` are reset to zero.
    """
    d = problem.dims
    cost_grad = _call("cost_gradient", problem.cost.gradient, Z)
    Gj = _call("ineq_jacobian", problem.ineq.jacobian, Z)
    Cj = _call("eq_jacobian", problem.eq.jacobian, Z)
    Fj = _call("dyn_jacobian", problem.dyn.jacobian, Z)
    Pj = problem.phi_jacobian(Z)
    base = (cost_grad - np.einsum("nij,ni->nj", Gj, sigma)
            - np.einsum("nij,ni->nj", Pj, gamma))
    eta = np.zeros((d.N, d.n_eta))
    lam = np.zeros((d.N, d.n_x))
    lam_next = np.zeros(d.n_x)
    for n in range(d.N - 1, -1, -1):
        b = base[n].copy()
        b[:d.n_x] += lam_next
        A = np.concatenate([Cj[n].T, Fj[n].T], axis=1)
        if A.shape[1]:
            sol = lstsq(A, -b, lapack_driver="gelsy")[0]
            eta[n] = sol[:d.n_eta]
            lam[n] = sol[d.n_eta:]
        lam_next = lam[n]
    big = max(np.abs(eta).max(initial=0.0), np.abs(lam).max(initial=0.0))
    if not big < lambda_max:
        eta[:] = 0.0
        lam[:] = 0.0
    return eta, lam


def run_restoration(problem: DiscretizedOCPEC, Y_start: Iterate, s: float, z: float,
                    opts: SolverOptions) -> RestorationOutcome:
    """Reduce the constraint violation by ``nu_M`` with the Newton/merit machinery.

    ``s`` and ``z`` stay fixed and SOC is off.  The returned iterate carries
    the restoration primals and inequality duals, with equality duals
    recovered for the original problem.
    """
    rp = build_restoration(problem, Y_start, opts.nu_sc)
    frp = rp.problem
    Yj = Y_start.copy()
    Yj.data[:, Yj.layout.eq] = 0.0
    _, M_start = constraint_violation(problem, Y_start, s, z)
    state = MeritState(beta=1.0, rho=opts.rho)
    inner = []
    status = FAILED
    M_j = M_start
    j = 0
    for j in range(opts.j_max + 1):
        _, M_j = constraint_violation(frp, Yj, s, z)
        if M_j <= opts.nu_M * M_start:
            status = RESTORED
            break
        if j == opts.j_max:
            break
        res = newton_step(frp, Yj, s, z, opts, state, soc_enabled=False)
        inner.append((s, z, res.outcome.soc_attempted))
        if res.outcome.failed:
            break
        Yj = res.outcome.Y
    if status == RESTORED:
        eta, lam = recover_equality_duals(problem, Yj.Z, Yj.sigma, Yj.gamma, opts.lambda_max)
        Yj.data[:, Yj.layout.eta] = eta
        Yj.data[:, Yj.layout.lam] = lam
    else:
        Yj = Y_start.copy()
    return RestorationOutcome(Yj, status, len(inner), M_start, M_j, inner)
