import numpy as np
import pytest

from ocpec.benchmarks import affine_dvi
from ocpec.options import SolverOptions
from ocpec.solver import solve

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_RESULTS = {}


def record_acceptance(number: int, ok: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def affine():
    return affine_dvi()


@pytest.fixture(scope="session")
def affine_solution(affine):
    """Default cold-start solve at s* = z* = 1e-4."""
    return solve(affine, None, SolverOptions(s_final=1e-4, z_final=1e-4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def affine_tight(affine, affine_solution):
    """The default solution polished at frozen (s, z) = (1e-4, 1e-4) until primal_inf <= 1e-11."""
    opts = SolverOptions(s0=1e-4, z0=1e-4, s_final=1e-4, z_final=1e-4, update_perturbation=False,
                         tol_primal=1e-11, tol_dual=1e-300, tol_max=1e-300, k_max=40)
    return solve(affine, affine_solution.Y, opts)
