import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpec.kkt import (Iterate, _fb_parts, assemble_kkt_blocks, eval_infeasibilities, eval_kkt_residual,
                       evaluate_values, fb, fb_grad, linearize, original_residual)
from ocpec.problem import BoundData, StageFunction, make_discretized
from ocpec.solver import cold_start

import helpers

reals = st.floats(-50, 50, allow_nan=False)
znn = st.floats(0, 10, allow_nan=False)


def test_fb_examples():
    assert fb(0.0, 0.0, 0.0) == 0.0
    assert fb(3.0, 4.0, 0.0) == -2.0
    assert fb(0.0, 0.0, 0.1) == pytest.approx(0.1, abs=1e-15)


def test_fb_grad_examples():
    assert fb_grad(0.0, 0.0, 1.0) == (-1.0, -1.0)
    assert fb_grad(1.0, 0.0, 0.0) == (0.0, -1.0)
    assert fb_grad(0.0, 0.0, 0.0) == (-1.0, -1.0)


@settings(max_examples=500)
@given(reals, reals, znn)
def test_fb_grad_range(a, b, z):
    da, db = fb_grad(a, b, z)
    assert -2.0 <= da <= 0.0 and -2.0 <= db <= 0.0


@settings(max_examples=500)
@given(reals, reals, reals, znn, znn)
def test_fb_lipschitz(a, b1, b2, z1, z2):
    assert abs(fb(a, b1, z1) - fb(a, b2, z2)) <= 2 * abs(b1 - b2) + abs(z1 - z2) + 1e-12


@settings(max_examples=500)
@given(reals, reals, znn)
def test_fb_grad_matches_finite_differences(a, b, z):
    if np.sqrt(a * a + b * b + z * z) <= 1e-3:
        return
    h = 1e-7
    da, db = fb_grad(a, b, z)
    assert da == pytest.approx((fb(a + h, b, z) - fb(a - h, b, z)) / (2 * h), abs=1e-6)
    assert db == pytest.approx((fb(a, b + h, z) - fb(a, b - h, z)) / (2 * h), abs=1e-6)


@settings(max_examples=300)
@given(st.floats(1e-3, 20), st.floats(1e-3, 5))
def test_fb_zero_on_the_smoothing_curve(a, z):
    b = z * z / (2 * a)
    assert abs(fb(a, b, z)) < 1e-9 * max(1.0, a + b)


def test_fb_equivalence_on_dyadic_grid():
    # dyadic points make ab - z^2/2 exact, so the two predicates can be compared strictly
    g = np.arange(-32, 33) / 16.0
    A, B = np.meshgrid(g, g)
    for z in (0.0, 0.5, 1.0):
        zero = np.abs(fb(A, B, z)) < 1e-12
        comp = (A >= -1e-12) & (B >= -1e-12) & (np.abs(A * B - z * z / 2) < 1e-10)
        np.testing.assert_array_equal(zero, comp)
        assert comp.sum() > 0


def test_scaling_diagonal_examples():
    _, _, d = _fb_parts(np.array(0.0), np.array(0.0), 0.0, 1e-7)
    assert d == pytest.approx(-1.0, abs=1e-12)
    _, _, d = _fb_parts(np.array(1.0), np.array(2.0), 0.0, 0.0)
    assert d == pytest.approx(-(1 - np.sqrt(5)) / (2 - np.sqrt(5)), abs=1e-12)
    assert d == pytest.approx(-5.23607, abs=1e-5)


@settings(max_examples=500)
@given(reals, reals, st.floats(1e-3, 10), st.sampled_from([0.0, 1e-7]))
def test_scaling_diagonal_negative(a, b, z, nu):
    _, _, d = _fb_parts(np.array(a), np.array(b), z, nu)
    assert d < 0


def _random_iterate(p, rng, scale=1.0):
    Y = Iterate(p.dims, rng.uniform(-scale, scale, (p.dims.N, p.dims.n_Y)))
    Y.data[:, Y.layout.sigma] = np.abs(Y.data[:, Y.layout.sigma])
    Y.data[:, Y.layout.gamma] = np.abs(Y.data[:, Y.layout.gamma])
    return Y


def test_blocks_symmetric(rng):
    from ocpec.benchmarks import affine_dvi, cartpole_friction
    for p in (affine_dvi(N=10), cartpole_friction(N=8), helpers.tiny_problem(N=3)):
        Y = _random_iterate(p, rng)
        K = assemble_kkt_blocks(p, Y, 1e-2, 1e-2, 1e-7, 1e-7)
        assert np.abs(K.J - np.swapaxes(K.J, 1, 2)).max() < 1e-12
        dense = K.to_dense()
        assert np.abs(dense - dense.T).max() < 1e-12


def _frozen_residual(p, Y0, s, z):
    """T with the FB row scalings fixed at Y0, as a function of the flat Y."""
    pt0 = linearize(p, Y0, s, z, 0.0, 0.0, with_matrix=False)
    inv_G, inv_P = pt0.residual.inv_G, pt0.residual.inv_Phi

    def T(flat):
        Y = Iterate(p.dims, flat)
        pt = linearize(p, Y, s, z, 0.0, 0.0, with_matrix=False)
        out = pt.residual.data.copy()
        lay = Y.layout
        out[:, lay.sigma] = -inv_G * pt.values.psi_G
        out[:, lay.gamma] = -inv_P * pt.values.psi_Phi
        return out.reshape(-1)

    return T


def test_matrix_matches_finite_difference_jacobian(rng):
    p = helpers.tiny_problem(N=2)
    Y = _random_iterate(p, rng, 0.8)
    s, z = 0.05, 0.1
    K = assemble_kkt_blocks(p, Y, s, z, 0.0, 0.0).to_dense()
    T = _frozen_residual(p, Y, s, z)
    y0 = Y.data.reshape(-1)
    h = 1e-6
    fd = np.empty_like(K)
    for j in range(y0.size):
        e = np.zeros_like(y0)
        e[j] = h
        fd[:, j] = (T(y0 + e) - T(y0 - e)) / (2 * h)
    assert np.abs(K - fd).max() / np.abs(fd).max() < 1e-5
    # and the residual itself is the frozen residual at Y
    np.testing.assert_allclose(eval_kkt_residual(p, Y, s, z, 0.0).flat, T(y0), atol=1e-14)


def test_residual_single_stage_by_hand():
    # N = 1, scalar everything: x' = a x + b tau + c p, K = x + p, cost x^2 + tau^2 + p^2 (+ terminal)
    p = helpers.tiny_problem(N=1, nonlinear=False)
    Y = Iterate(p.dims)
    lay = Y.layout
    x, tau, pp, w = 0.3, -0.2, 0.4, 0.1
    Y.data[0, lay.Z] = [x, tau, pp, w]
    Y.data[0, lay.sigma] = [0.5, 0.7]
    Y.data[0, lay.eta] = [0.2]
    Y.data[0, lay.lam] = [-0.3]
    Y.data[0, lay.gamma] = [0.1, 0.2, 0.3, 0.4]
    s, z, dt, x0 = 0.01, 0.05, 0.1, 0.5
    T = eval_kkt_residual(p, Y, s, z, 0.0).data[0]
    raw = original_residual(p, Y, s, z)[0]
    G = np.array([tau + 3, 3 - tau])
    C = w - (x + pp)
    F = (-x + tau + pp) * dt - x
    Phi = np.array([pp + 1, 1 - pp, s - (pp + 1) * w, s + (1 - pp) * w])
    sig, gam, eta, lam = np.array([0.5, 0.7]), np.array([0.1, 0.2, 0.3, 0.4]), 0.2, -0.3
    # cost: stage (x^2 + 0.1 tau^2 + 0.1 p^2) dt + terminal 5 x^2
    gL = dt * np.array([2 * x, 0.2 * tau, 0.2 * pp, 0.0]) + np.array([10 * x, 0, 0, 0])
    dG = np.array([[0, 1, 0, 0], [0, -1, 0, 0]])
    dC = np.array([-1, 0, -1, 1])
    dF = np.array([-dt - 1, dt, dt, 0])
    dPhi = np.array([[0, 0, 1, 0], [0, 0, -1, 0], [0, 0, -w, -(pp + 1)], [0, 0, -w, 1 - pp]])
    grad = gL - sig @ dG + eta * dC + lam * dF - gam @ dPhi
    expect = np.concatenate([fb(sig, G, z), [C], [x0 + F], fb(gam, Phi, z), grad])
    np.testing.assert_allclose(raw, expect, atol=1e-14)
    np.testing.assert_allclose(T[lay.Z], grad, atol=1e-14)
    np.testing.assert_allclose(T[lay.eta], C, atol=1e-14)


def test_zero_field_dynamics_block_vanishes():
    nx = 2
    f = StageFunction(lambda v, t: np.zeros((v.shape[0], nx)),
                      lambda v, t: np.zeros((v.shape[0], nx, v.shape[1])), None, size=nx)
    K = StageFunction(lambda v, t: np.zeros((v.shape[0], 1)),
                      lambda v, t: np.zeros((v.shape[0], 1, v.shape[1])), None, size=1)
    zero_cost = StageFunction(lambda v, t: np.zeros((v.shape[0], 1)),
                              lambda v, t: np.zeros((v.shape[0], 1, v.shape[1])), None, size=1)
    x0 = np.array([0.4, -1.1])
    p = make_discretized(f=f, K=K, stage_cost=zero_cost, terminal_cost=None, G=None, C=None,
                         bounds=BoundData([-1.0], [1.0]), N=5, dt=0.1, x0=x0, n_tau=1)
    Y = Iterate(p.dims)
    Y.data[:, Y.layout.x] = x0
    T = eval_kkt_residual(p, Y, 0.1, 0.1, 1e-7)
    np.testing.assert_array_equal(T.data[:, Y.layout.lam], 0.0)


def test_zero_duals_give_raw_gradient(rng):
    p = helpers.tiny_problem(N=3)
    Y = Iterate(p.dims)
    Y.data[:, Y.layout.Z] = rng.normal(size=(3, p.dims.n_Z))
    _, dual = eval_infeasibilities(p, Y, 0.1, 0.1)
    grad = eval_kkt_residual(p, Y, 0.1, 0.1, 0.0).data[:, Y.layout.Z]
    assert dual == np.abs(grad).max()


def test_primal_inf_only_sees_duals_through_fb(rng):
    p = helpers.tiny_problem(N=3)
    Y = cold_start(p)
    a = evaluate_values(p, Y, 0.1, 0.1)
    Y2 = Y.copy()
    Y2.data[:, Y.layout.eta] = rng.normal(size=Y2.eta.shape)
    Y2.data[:, Y.layout.lam] = rng.normal(size=Y2.lam.shape)
    Y2.data[:, Y.layout.sigma] = rng.uniform(0, 2, size=Y2.sigma.shape)
    b = evaluate_values(p, Y2, 0.1, 0.1)
    np.testing.assert_array_equal(a.C, b.C)
    np.testing.assert_array_equal(a.defect, b.defect)
    np.testing.assert_allclose(b.psi_G, fb(Y2.sigma, b.G, 0.1))
    primal, _ = eval_infeasibilities(p, Y2, 0.1, 0.1)
    expect = max(np.abs(b.psi_G).max(), np.abs(b.C).max(), np.abs(b.defect).max(), np.abs(b.psi_Phi).max())
    assert primal == expect


def test_converged_residual_small(affine, affine_tight):
    assert affine_tight.optimal
    Y, s, z = affine_tight.Y, affine_tight.s, affine_tight.z
    p_inf, d_inf = eval_infeasibilities(affine, Y, s, z)
    assert p_inf <= 1e-4 and d_inf <= 1e-4
    # every unscaled block of the KKT system vanishes at the solution
    assert np.abs(original_residual(affine, Y, s, z)).max() < 1e-10
