"""l1 exact-penalty merit, penalty update, backtracking line search and second-order correction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kkt import Iterate, KKTMatrix, KKTPoint, evaluate_values, fb, linearize
from .options import SolverOptions
from .problem import DiscretizedOCPEC, EvaluatorError
from .riccati import SingularStageBlock, StageFactorization, factor_and_solve, resolve

EPS_M = 1e-12
BETA_PAD = 1e-4

FULL_STEP = "full-step"
SOC_STEP = "soc-step"
BACKTRACKED = "backtracked"
FAILURE = "failure"


@dataclass
class MeritState:
    beta: float = 1.0
    rho: float = 0.1
    dtheta: float = 0.0
    alpha: float = 0.0
    delta: float = 0.0  # last Hessian shift used by the inertia correction


@dataclass
class LineSearchOutcome:
    Y: Iterate
    alpha: float
    kind: str
    trials: int
    theta: float = np.nan
    soc_attempted: bool = False
    soc_solves: int = 0
    reason: str = ""

    @property
    def failed(self) -> bool:
        return self.kind == FAILURE


def constraint_violation(problem: DiscretizedOCPEC, Y: Iterate, s: float, z: float):
    """Per-stage ``M_n`` and their sum."""
    M = evaluate_values(problem, Y, s, z).violation()
    return M, float(M.sum())


def merit(problem: DiscretizedOCPEC, Y: Iterate, s: float, z: float, beta: float) -> float:
    if not beta > 0:
        raise ValueError("beta must be positive")
    v = evaluate_values(problem, Y, s, z)
    return v.total_cost + beta * float(v.violation().sum())


def _merit_and_cost(problem, Y, s, z, beta):
    v = evaluate_values(problem, Y, s, z)
    return v.total_cost + beta * float(v.violation().sum()), v.total_cost, v


def update_penalty(beta_prev: float, cost_slope: float, total_M: float, rho: float) -> float:
    if total_M < 0:
        raise ValueError("constraint violation must be nonnegative")
    if total_M > EPS_M:
        return max(beta_prev, cost_slope / ((1.0 - rho) * total_M) + BETA_PAD)
    return beta_prev


def directional_derivative(cost_slope: float, total_M: float, beta: float) -> float:
    return cost_slope - beta * total_M


def cost_slope(point: KKTPoint, dY: np.ndarray) -> float:
    return float(np.sum(point.jac.cost_grad * dY[:, point.Y.layout.Z]))


def correction_residual(problem, point: KKTPoint, Y_fs: Iterate, values_fs=None) -> np.ndarray:
    """``T_cor``: FB scalings from the current iterate, constraints at the full step, zero gradient block."""
    lay = point.Y.layout
    v = values_fs if values_fs is not None else evaluate_values(problem, Y_fs, point.s, point.z)
    T = np.zeros_like(point.residual.data)
    T[:, lay.sigma] = -point.residual.inv_G * fb(Y_fs.sigma, v.G, point.z)
    T[:, lay.eta] = v.C
    T[:, lay.lam] = v.defect
    T[:, lay.gamma] = -point.residual.inv_Phi * fb(Y_fs.gamma, v.Phi, point.z)
    return T


def line_search_with_soc(problem: DiscretizedOCPEC, point: KKTPoint, dY: np.ndarray,
                         fact: Optional[StageFactorization], state: MeritState,
                         soc_enabled: bool, opts: SolverOptions) -> LineSearchOutcome:
    """Backtracking Armijo search on the merit function with at most one SOC attempt.

    ``state.beta`` and ``state.dtheta`` must already correspond to ``dY``.
    """
    Y, s, z = point.Y, point.s, point.z
    beta = state.beta
    cost0 = point.values.total_cost
    theta0 = cost0 + beta * point.violation
    D = state.dtheta
    alpha = 1.0
    trials = 0
    soc_tried = False
    soc_solves = 0
    while True:
        trials += 1
        Yt = Y.step(alpha, dY)
        try:
            theta, cost, v_t = _merit_and_cost(problem, Yt, s, z, beta)
        except EvaluatorError as exc:
            return LineSearchOutcome(Y, 0.0, FAILURE, trials, theta0, soc_tried, soc_solves,
                                     reason=f"evaluator failure at trial: {exc}")
        if theta <= theta0 + opts.nu_D * alpha * D:
            kind = FULL_STEP if alpha == 1.0 else BACKTRACKED
            state.alpha = alpha
            return LineSearchOutcome(Yt, alpha, kind, trials, theta, soc_tried, soc_solves)
        if alpha == 1.0 and soc_enabled and not soc_tried and fact is not None and cost <= cost0:
            soc_tried = True
            T_cor = correction_residual(problem, point, Yt, v_t)
            d_cor = resolve(fact, point.residual.data + T_cor)
            soc_solves += 1
            Y_soc = Y.step(1.0, d_cor)
            try:
                theta_soc = merit(problem, Y_soc, s, z, beta)
            except EvaluatorError:
                theta_soc = np.inf
            if theta_soc <= theta0:
                state.alpha = 1.0
                return LineSearchOutcome(Y_soc, 1.0, SOC_STEP, trials, theta_soc, True, soc_solves)
        if alpha <= opts.alpha_min:
            return LineSearchOutcome(Y, 0.0, FAILURE, trials, theta0, soc_tried, soc_solves,
                                     reason="step size reached alpha_min")
        alpha = max(opts.nu_alpha * alpha, opts.alpha_min)


@dataclass
class NewtonResult:
    point: KKTPoint
    outcome: LineSearchOutcome
    dY: Optional[np.ndarray]
    fact: Optional[StageFactorization]
    total_M: float
    slope: float
    factorizations: int


def _direction(point, opts: SolverOptions, state: MeritState):
    """Solve for the Newton direction, shifting the Z block until the inertia is right.

    A singular stage block counts as wrong inertia.  A shift ``delta I`` on the Hessian block is tried only when the unshifted
    matrix has the wrong inertia.  The first shift reuses the last successful
    one (scaled down), then grows geometrically.  Returns ``(None, None, k)``
    if ``delta_max`` is exceeded.
    """
    if not opts.inertia_correction:
        dY, fact = factor_and_solve(point.matrix, point.residual)
        return dY, fact, 1
    nfac = 1
    try:
        dY, fact = factor_and_solve(point.matrix, point.residual, inertia=True)
        if fact.inertia == fact.expected_inertia:
            state.delta = 0.0
            return dY, fact, nfac
    except SingularStageBlock:
        pass  # a singular block is treated like wrong inertia
    delta = opts.delta_init if state.delta == 0.0 else max(opts.delta_min, state.delta / 3.0)
    grow = 100.0 if state.delta == 0.0 else 8.0
    Z = point.matrix.layout.Z
    nZ = Z.stop - Z.start
    while delta <= opts.delta_max:
        shifted = point.matrix.J.copy()
        shifted[:, Z, Z] += delta * np.eye(nZ)
        try:
            dY, fact = factor_and_solve(KKTMatrix(shifted, point.matrix.layout), point.residual,
                                        inertia=True)
            ok = fact.inertia == fact.expected_inertia
        except SingularStageBlock:
            ok = False
        nfac += 1
        if ok:
            state.delta = delta
            return dY, fact, nfac
        delta *= grow
    return None, None, nfac


def newton_step(problem: DiscretizedOCPEC, Y: Iterate, s: float, z: float,
                opts: SolverOptions, state: MeritState, soc_enabled: bool) -> NewtonResult:
    """Direction, penalty update and line search at one iterate.

    A singular reduced block is reported as a line-search failure so the
    caller can switch to restoration.
    """
    point = linearize(problem, Y, s, z, opts.nu_J, opts.nu_G)
    total_M = point.violation
    try:
        dY, fact, nfac = _direction(point, opts, state)
    except SingularStageBlock as exc:
        out = LineSearchOutcome(Y, 0.0, FAILURE, 0, np.nan, reason=str(exc))
        return NewtonResult(point, out, None, None, total_M, np.nan, 0)
    if dY is None:
        out = LineSearchOutcome(Y, 0.0, FAILURE, 0, np.nan, reason="inertia correction failed")
        return NewtonResult(point, out, None, None, total_M, np.nan, nfac)
    if not np.all(np.isfinite(dY)):
        out = LineSearchOutcome(Y, 0.0, FAILURE, 0, np.nan, reason="non-finite direction")
        return NewtonResult(point, out, None, None, total_M, np.nan, nfac)
    slope = cost_slope(point, dY)
    state.beta = update_penalty(state.beta, slope, total_M, state.rho)
    state.dtheta = directional_derivative(slope, total_M, state.beta)
    outcome = line_search_with_soc(problem, point, dY, fact, state, soc_enabled, opts)
    return NewtonResult(point, outcome, dY, fact, total_M, slope, nfac)
