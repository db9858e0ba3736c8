"""Non-interior-point continuation solver for optimal control with equilibrium constraints."""
from .globalization import MeritState, constraint_violation, merit
from .kkt import Iterate, eval_infeasibilities, eval_kkt_residual, assemble_kkt_blocks, fb, fb_grad
from .options import SolverOptions
from .problem import (BoundData, Dimensions, DiscretizedOCPEC, EvaluatorError, StageFunction,
                      build_scholtes_jacobian, build_scholtes_phi, check_derivatives,
                      make_discretized)
from .restoration import recover_equality_duals, run_restoration
from .riccati import SingularStageBlock, factor_and_solve, resolve
from .solver import SolveReport, check_termination, cold_start, solve, update_perturbation

__all__ = [
    "BoundData", "Dimensions", "DiscretizedOCPEC", "EvaluatorError", "Iterate", "MeritState",
    "SingularStageBlock", "SolveReport", "SolverOptions", "StageFunction", "assemble_kkt_blocks",
    "build_scholtes_jacobian", "build_scholtes_phi", "check_derivatives", "check_termination",
    "cold_start", "constraint_violation", "eval_infeasibilities", "eval_kkt_residual", "factor_and_solve",
    "fb", "fb_grad", "make_discretized", "merit", "recover_equality_duals", "resolve", "run_restoration",
    "solve", "update_perturbation",
]
