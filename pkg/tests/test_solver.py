import numpy as np
import pytest
from dataclasses import asdict

from ocpec.kkt import Iterate
from ocpec.options import SolverOptions
from ocpec.problem import StageFunction
from ocpec.solver import (EVALUATOR_ERROR, MAX_ITERATIONS, OPTIMAL, RESTORATION_FAILED, check_termination,
                          cold_start, solve, termination_branches, update_perturbation)

import helpers
from test_globalization import _scalar_problem


def test_termination_examples():
    o = SolverOptions(s_final=1e-4, z_final=1e-4)
    assert check_termination(1e-4, 1e-4, 5e-5, 0.3, o)
    assert termination_branches(1e-4, 1e-4, 5e-5, 0.3, o) == ("primal",)
    assert not check_termination(2e-4, 1e-4, 0.0, 0.0, o)
    assert termination_branches(1e-4, 1e-4, 5e-3, 5e-3, o) == ("max",)
    assert not check_termination(1e-4, 1e-4, 5e-2, 5e-3, o)


def test_perturbation_examples():
    o = SolverOptions(s_final=1e-4, z_final=1e-4)
    assert update_perturbation(0.1, 0.1, 0.0, o)[0] == pytest.approx(0.02)
    assert update_perturbation(0.01, 0.01, 0.0, o)[0] == pytest.approx(0.001)
    assert update_perturbation(1.5e-4, 1.5e-4, 0.0, o) == (1e-4, 1e-4)
    # trigger off: primal infeasibility above 10 tol_primal leaves (s, z) alone
    assert update_perturbation(0.1, 0.05, 1.1e-3, o) == (0.1, 0.05)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(s0=1e-5, s_final=1e-4)
    with pytest.raises(ValueError):
        SolverOptions(nu_alpha=1.5)
    with pytest.raises(ValueError):
        SolverOptions(kappa_se=1.0)
    assert SolverOptions(s0=0.3).z0 == 0.3


def test_cold_start():
    p = helpers.tiny_problem(N=3)
    Y = cold_start(p)
    assert np.all(Y.sigma == 1) and np.all(Y.gamma == 1)
    assert not Y.Z.any() and not Y.eta.any() and not Y.lam.any()


def test_iteration_cap(affine):
    far = Iterate(affine.dims, np.full((affine.dims.N, affine.dims.n_Y), 3.0))
    rep = solve(affine, far, SolverOptions(k_max=1))
    assert rep.status == MAX_ITERATIONS and len(rep.history) == 1
    rep0 = solve(affine, None, SolverOptions(k_max=0))
    assert rep0.status == MAX_ITERATIONS and rep0.history == []


def test_convex_quadratic_from_optimum():
    p = _scalar_problem(center=0.4)
    Y = Iterate(p.dims)
    Y.data[0, 0] = 0.4
    rep = solve(p, Y)
    assert rep.optimal and rep.iterations <= 6
    assert all(h.alpha == 1.0 and h.kind == "full-step" for h in rep.history)
    assert rep.Y.tau[0, 0] == pytest.approx(0.4, abs=1e-12)


def test_default_affine(affine, affine_solution):
    rep = affine_solution
    assert rep.status == OPTIMAL and rep.iterations <= 500
    assert rep.s == 1e-4 and rep.z == 1e-4
    assert rep.branches and rep.summary()["single_branch"] == (len(rep.branches) == 1)
    # history telemetry is coherent
    s = [h.s for h in rep.history]
    assert all(b <= a for a, b in zip(s, s[1:]))
    assert [h.k for h in rep.history] == list(range(1, rep.iterations + 1))
    for h in rep.history:
        if h.kind != "failure":
            assert h.theta_new <= h.theta + 1e-12 * max(1.0, abs(h.theta))


def test_deterministic(affine):
    from ocpec.benchmarks import random_initial_guess
    Y0 = random_initial_guess(affine, 3)
    a = solve(affine, Y0, SolverOptions(s_final=1e-3, z_final=1e-3))
    b = solve(affine, Y0, SolverOptions(s_final=1e-3, z_final=1e-3))
    assert a.status == b.status and a.iterations == b.iterations
    np.testing.assert_array_equal(a.Y.data, b.Y.data)
    strip = lambda r: [tuple(v for k, v in asdict(h).items()) for h in r.history]
    assert strip(a) == strip(b)


def test_failure_rows_match_frp_events(affine, affine_solution):
    Y0 = affine_solution.Y.copy()
    Y0.data[:, Y0.layout.x] += 0.05
    rep = solve(affine, Y0)
    assert rep.frp_events
    frp_rows = [h.k for h in rep.history if h.frp]
    assert frp_rows == [e.k for e in rep.frp_events]
    for h in rep.history:
        assert h.frp == (h.kind == "failure")


def test_restoration_disabled_reports_failure(affine, affine_solution):
    Y0 = affine_solution.Y.copy()
    Y0.data[:, Y0.layout.x] += 0.05
    rep = solve(affine, Y0, SolverOptions(restoration_enabled=False))
    assert rep.status == RESTORATION_FAILED
    assert rep.history[-1].kind == "failure" and not rep.frp_events


def test_evaluator_error_status():
    p = helpers.tiny_problem(N=2)
    good = p.cost.value

    def bad(Z):
        out = good(Z)
        return np.where(np.abs(Z[:, :1]) > 0.2, np.nan, out)

    from dataclasses import replace
    from ocpec.problem import StageCost
    q = replace(p, cost=StageCost(bad, p.cost.gradient, p.cost.hessian))
    rep = solve(q)
    assert rep.status == EVALUATOR_ERROR and "cost" in rep.message


def test_shape_mismatch_rejected(affine):
    with pytest.raises(ValueError):
        solve(affine, Iterate(helpers.tiny_problem().dims))


def test_callback_sees_every_row():
    p = helpers.tiny_problem(N=4)
    rows = []
    rep = solve(p, None, SolverOptions(s_final=1e-3, z_final=1e-3), callback=rows.append)
    assert rep.optimal and rows == rep.history
