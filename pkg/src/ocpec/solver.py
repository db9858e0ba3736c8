"""Continuation driver: Newton steps on the FB-mapped KKT system with s, z driven to their targets."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .globalization import MeritState, newton_step
from .kkt import Iterate, evaluate_values, eval_infeasibilities
from .options import SolverOptions
from .problem import DiscretizedOCPEC, EvaluatorError
from .restoration import run_restoration

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
RESTORATION_FAILED = "restoration_failed"
EVALUATOR_ERROR = "evaluator_error"
STATUSES = (OPTIMAL, MAX_ITERATIONS, RESTORATION_FAILED, EVALUATOR_ERROR)


@dataclass
class HistoryRow:
    k: int
    theta: float  # merit at the linearization point, with the beta used in the search
    theta_new: float  # merit of the accepted trial (NaN on failure)
    total_M: float
    primal_inf: float
    dual_inf: float
    residual_inf: float  # ||T||_inf at the linearization point
    alpha: float
    kind: str
    s: float
    z: float
    beta: float
    soc: bool  # SOC attempted
    frp: bool
    trials: int
    factorizations: int
    soc_solves: int


@dataclass
class FRPEvent:
    k: int
    status: str
    inner_iterations: int
    M_start: float
    M_end: float
    nu_M: float
    M_restored: float  # violation of the returned iterate in the original problem

    @property
    def satisfied(self) -> bool:
        return self.M_restored <= self.nu_M * self.M_start


@dataclass
class SolveReport:
    status: str
    Y: Iterate
    s: float
    z: float
    iterations: int
    accepted: int
    history: list
    frp_events: list
    wall_time: float
    primal_inf: float = np.nan
    dual_inf: float = np.nan
    branches: tuple = ()
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "accepted": self.accepted,
            "s": self.s,
            "z": self.z,
            "primal_inf": self.primal_inf,
            "dual_inf": self.dual_inf,
            "termination_branches": list(self.branches),
            # only one branch of the infeasibility test held at exit
            "single_branch": len(self.branches) == 1,
            "frp_events": [asdict(e) for e in self.frp_events],
            "wall_time": self.wall_time,
            "message": self.message,
        }


def termination_branches(s, z, primal_inf, dual_inf, opts: SolverOptions) -> tuple:
    """Names of the satisfied infeasibility branches (empty if s, z not at target)."""
    if not (s <= opts.s_final and z <= opts.z_final):
        return ()
    out = []
    if primal_inf <= opts.tol_primal:
        out.append("primal")
    if dual_inf <= opts.tol_dual:
        out.append("dual")
    if max(primal_inf, dual_inf) <= opts.tol_max:
        out.append("max")
    return tuple(out)


def check_termination(s, z, primal_inf, dual_inf, opts: SolverOptions) -> bool:
    return bool(termination_branches(s, z, primal_inf, dual_inf, opts))


def update_perturbation(s, z, primal_inf, opts: SolverOptions):
    if primal_inf <= 10.0 * opts.tol_primal:
        s = max(min(opts.kappa_st * s, s ** opts.kappa_se), opts.s_final)
        z = max(min(opts.kappa_zt * z, z ** opts.kappa_ze), opts.z_final)
    return s, z


def cold_start(problem: DiscretizedOCPEC) -> Iterate:
    """Zero primals and equality duals, unit inequality duals."""
    Y = Iterate(problem.dims)
    Y.data[:, Y.layout.sigma] = 1.0
    Y.data[:, Y.layout.gamma] = 1.0
    return Y


def solve(problem: DiscretizedOCPEC, Y0: Optional[Iterate] = None,
          opts: Optional[SolverOptions] = None,
          callback: Optional[Callable[[HistoryRow], None]] = None) -> SolveReport:
    opts = opts or SolverOptions()
    Y = cold_start(problem) if Y0 is None else Y0.copy()
    if Y.data.shape != (problem.dims.N, Y.layout.n_Y):
        raise ValueError(f"initial iterate has shape {Y.data.shape}, expected "
                         f"{(problem.dims.N, Y.layout.n_Y)}")
    s, z = float(opts.s0), float(opts.z0)
    state = MeritState(beta=opts.beta0, rho=opts.rho)
    history, frp_events = [], []
    accepted = 0
    t0 = time.perf_counter()
    status, message = MAX_ITERATIONS, ""
    p_inf = d_inf = np.nan
    branches = ()
    k = 0
    try:
        p_inf, d_inf = eval_infeasibilities(problem, Y, s, z)
        for k in range(opts.k_max + 1):
            branches = termination_branches(s, z, p_inf, d_inf, opts)
            if branches:
                status = OPTIMAL
                break
            if k == opts.k_max:
                break
            try:
                res = newton_step(problem, Y, s, z, opts, state, opts.soc_enabled)
            except EvaluatorError as exc:
                exc.iteration = k + 1
                raise
            out = res.outcome
            pt = res.point
            row = HistoryRow(
                k=k + 1, theta=pt.values.total_cost + state.beta * res.total_M,
                theta_new=np.nan if out.failed else out.theta,
                total_M=res.total_M, primal_inf=pt.primal_inf, dual_inf=pt.dual_inf,
                residual_inf=pt.residual.norm_inf(), alpha=out.alpha, kind=out.kind,
                s=s, z=z, beta=state.beta, soc=out.soc_attempted, frp=False,
                trials=out.trials, factorizations=res.factorizations, soc_solves=out.soc_solves,
            )
            if out.failed:
                if not opts.restoration_enabled:
                    history.append(row)
                    status, message = RESTORATION_FAILED, f"line search failed: {out.reason}"
                    break
                row.frp = True
                rest = run_restoration(problem, Y, s, z, opts)
                M_new = float(evaluate_values(problem, rest.Y, s, z).violation().sum())
                frp_events.append(FRPEvent(k + 1, rest.status, rest.iterations,
                                           rest.M_start, rest.M_end, opts.nu_M, M_new))
                history.append(row)
                if not rest.restored:
                    status, message = RESTORATION_FAILED, f"restoration failed at iteration {k + 1}"
                    break
                Y = rest.Y
            else:
                history.append(row)
                Y = out.Y
                accepted += 1
            if callback is not None:
                callback(row)
            p_inf, d_inf = eval_infeasibilities(problem, Y, s, z)
            if opts.update_perturbation:
                s_new, z_new = update_perturbation(s, z, p_inf, opts)
                if (s_new, z_new) != (s, z):
                    s, z = s_new, z_new
                    p_inf, d_inf = eval_infeasibilities(problem, Y, s, z)
    except EvaluatorError as exc:
        status, message = EVALUATOR_ERROR, str(exc)
        if exc.iteration is None:
            exc.iteration = k
    if status == RESTORATION_FAILED:
        # report the final iterate's measures consistently
        try:
            p_inf, d_inf = eval_infeasibilities(problem, Y, s, z)
        except EvaluatorError:
            pass
    return SolveReport(
        status=status, Y=Y, s=s, z=z, iterations=len(history), accepted=accepted,
        history=history, frp_events=frp_events, wall_time=time.perf_counter() - t0,
        primal_inf=float(p_inf), dual_inf=float(d_inf), branches=branches, message=message,
    )
