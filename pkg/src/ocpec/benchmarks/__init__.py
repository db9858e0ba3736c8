from .affine import affine_dvi, default_affine_cost
from .cartpole import CartPoleParams, cartpole_friction, default_cartpole_cost
from .common import QuadraticCostSpec, linear_reference
from .metrics import (SolutionMetrics, evaluate_solution_metrics, extract_mode_sequence,
                      random_initial_guess, switch_times)
