import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as spi

from viscomem.history import (CFLViolation, ExpModes, SGrid, SnapshotTrajectory, advance_history,
                              constant_profile, convolution_memory_force, exp_coefficients, make_history,
                              memory_force, rep_formula_oracle, saturating_profile, t_dissipation,
                              with_profile)
from viscomem.kernels import PiecewiseConstant, PronySum, certify_theta, exponential, geometric_steps, indicator
from viscomem.spectral import DomainSpec

DOM = DomainSpec.box(math.pi, 4)
PHI = DOM.mode(1).coeffs


def smooth_u(t):
    return (1 - math.cos(2 * t)) * PHI


def smooth_v(t):
    return 2 * math.sin(2 * t) * PHI


def sgrid_error(dt, kernel, T=2.0):
    eta0 = SGrid.build(kernel, DOM, dt, growth=1.0, s_max=4.0, spacing=2 * dt)
    eta = eta0
    n = int(round(T / dt))
    for i in range(n):
        eta = eta.advance(smooth_v((i + 1) * dt), dt, v_old=smooth_v(i * dt))
    ref = rep_formula_oracle(smooth_u, eta0, n * dt)
    return float(np.max(np.abs(eta.data - ref.data)))


def test_exp_coefficients_against_quadrature():
    z = np.array([1e-8, 0.3, 0.49, 0.51, 2.0, 40.0])
    E, phi1, psi, chi0, chi1 = exp_coefficients(z)
    for i, zz in enumerate(z):
        q = lambda g: spi.quad(g, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)[0]
        assert E[i] == pytest.approx(math.exp(-zz), rel=1e-14)
        assert phi1[i] == pytest.approx(q(lambda x: math.exp(-zz * x)), rel=1e-12)
        assert psi[i] == pytest.approx(q(lambda x: x * math.exp(-zz * x)), rel=1e-12)
        assert chi0[i] == pytest.approx(q(lambda x: x * -math.expm1(-zz * x) / zz), rel=1e-10)
        assert chi1[i] == pytest.approx(q(lambda x: (1 - x) * -math.expm1(-zz * x) / zz), rel=1e-10)


def test_memory_force_zero_and_single_mode():
    eta = ExpModes.from_kernel(exponential(), DOM)
    assert not np.any(memory_force(eta).coeffs)
    one = eta.with_data(PHI[None].copy())
    assert np.allclose(memory_force(one).coeffs, PHI)


def test_expmodes_free_decay():
    mu = PronySum(((1.0, 0.5), (2.0, 3.0)))
    rng = np.random.default_rng(0)
    eta = ExpModes.from_kernel(mu, DOM, rng.standard_normal((2, 4)))
    new = eta.advance(np.zeros(4), 0.3)
    assert np.allclose(new.data, np.exp(-mu.rates * 0.3)[:, None] * eta.data, rtol=1e-15)


def test_expmodes_exact_for_linear_velocity():
    # zeta' = -d zeta + v with v = a + b t solved in closed form
    d, a, b, dt = 2.5, 0.7, -1.3, 0.4
    eta = ExpModes.from_kernel(PronySum(((1.0, d),)), DOM, np.full((1, 4), 0.2))
    new = eta.advance(np.full(4, a + b * dt), dt, v_old=np.full(4, a))
    exact = 0.2 * math.exp(-d * dt) + spi.quad(lambda s: math.exp(-d * (dt - s)) * (a + b * s), 0, dt,
                                               epsabs=1e-15)[0]
    assert np.allclose(new.data, exact, rtol=1e-13)


def test_constant_u_keeps_zero_history():
    for eta in (ExpModes.from_kernel(exponential(), DOM), SGrid.build(indicator(), DOM, 0.05)):
        for _ in range(10):
            eta = eta.advance(np.zeros(4), 0.05)
        assert not np.any(eta.data)


def test_rep_oracle_trivial_cases():
    eta0 = SGrid.build(exponential(), DOM, 0.1, s_max=3.0)
    assert rep_formula_oracle(smooth_u, eta0, 0.0) is eta0
    const = rep_formula_oracle(lambda t: PHI, eta0, 1.5)
    assert not np.any(const.data)
    lin = rep_formula_oracle(lambda t: t * PHI, eta0, 2.0)
    inside = eta0.nodes <= 2.0
    assert np.allclose(lin.data[inside], eta0.nodes[inside, None] * PHI[None], atol=1e-14)
    with pytest.raises(ValueError):
        rep_formula_oracle(smooth_u, eta0, -1.0)


def test_snapshot_trajectory_gap():
    traj = SnapshotTrajectory([0.0, 1.0], [PHI, 2 * PHI])
    assert np.allclose(traj(0.5), 1.5 * PHI)
    with pytest.raises(ValueError):
        traj(1.5)


def test_t_dissipation_signs():
    rng = np.random.default_rng(1)
    mu = PronySum(((1.0, 1.0), (0.5, 4.0)))
    em = ExpModes.from_kernel(mu, DOM, rng.standard_normal((2, 4)))
    assert em.t_dissipation() <= 0.0
    assert t_dissipation(em.zeros_like()) == 0.0
    # -sum w_j d_j ||zeta_j||_1^2 with w_j = c_j / d_j
    assert em.t_dissipation() == pytest.approx(-sum(
        c * np.sum(DOM.lam * em.data[j] ** 2) for j, (c, _) in enumerate(mu.terms)))
    worst = -math.inf
    for kernel in (exponential(), indicator(1.0), geometric_steps()):
        eta = SGrid.build(kernel, DOM, 0.02, s_max=6.0)
        for n in range(200):
            eta = eta.advance(rng.standard_normal(4), 0.02)
            worst = max(worst, eta.t_dissipation())
    assert worst <= 1e-10


def test_sgrid_matches_rep_oracle_first_order():
    errs = [sgrid_error(dt, exponential()) for dt in (0.02, 0.01, 0.005)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(0.8 <= p <= 1.2 for p in orders)


def test_expmodes_matches_direct_convolution():
    mu = PronySum(((1.0, 1.0), (2.0, 3.0)))
    dt, n = 0.01, 150
    times = dt * np.arange(n + 1)
    traj = SnapshotTrajectory(times, [np.sin(1.3 * t) * PHI + t * t * DOM.mode(2).coeffs for t in times])
    eta = ExpModes.from_kernel(mu, DOM)
    for i in range(n):
        chord = (traj.coeffs[i + 1] - traj.coeffs[i]) / dt
        eta = eta.advance(chord, dt, v_old=chord)
    ref = convolution_memory_force(mu, traj, DOM, times[-1])
    assert np.max(np.abs(eta.memory_force().coeffs - ref)) < 1e-8


def test_expmodes_and_sgrid_forces_agree():
    mu = exponential()
    dt = 0.005
    em = ExpModes.from_kernel(mu, DOM)
    sg = SGrid.build(mu, DOM, dt, growth=1.01)
    for i in range(400):
        v0, v1 = smooth_v(i * dt), smooth_v((i + 1) * dt)
        em = em.advance(v1, dt, v_old=v0)
        sg = sg.advance(v1, dt, v_old=v0)
    a, b = em.memory_force().coeffs, sg.memory_force().coeffs
    assert np.max(np.abs(a - b)) <= 0.02 * np.max(np.abs(a))


def test_psi_bound_random_states():
    rng = np.random.default_rng(2)
    for mu in (PronySum(((1.0, 1.0), (3.0, 5.0))), indicator(2.0), geometric_steps()):
        theta = certify_theta(mu)
        eta = make_history(mu, DOM, 0.05)
        for _ in range(50):
            st_ = eta.with_data(rng.standard_normal(eta.data.shape))
            assert 0.0 <= st_.psi() <= theta * st_.norm_sq() * (1 + 1e-12)


def test_sgrid_cfl_and_jump_nodes():
    with pytest.raises(CFLViolation):
        SGrid.build(exponential(), DOM, 0.1, spacing=0.05)
    eta = SGrid.build(indicator(), DOM, 0.1)
    with pytest.raises(CFLViolation):
        eta.advance(np.zeros(4), 0.2)
    steps = SGrid.build(PiecewiseConstant(np.array([0.77, 2.31]), np.array([2.0, 1.0])), DOM, 0.05)
    assert 0.77 in steps.nodes and 2.31 in steps.nodes
    with pytest.raises(CFLViolation):
        SGrid.build(PiecewiseConstant(np.array([0.77, 0.78]), np.array([2.0, 1.0])), DOM, 0.05)


def test_sgrid_weights_integrate_kernel():
    mu = PiecewiseConstant(np.array([0.5, 2.0]), np.array([2.0, 1.0]))
    eta = SGrid.build(mu, DOM, 0.01, growth=1.0, s_max=3.0)
    ones = eta.with_data(np.ones_like(eta.data) * PHI[None])
    # eta = phi for every s > 0: ||eta||^2 = kappa ||phi||_1^2 up to the first half cell
    assert ones.norm_sq() == pytest.approx(mu.total_mass, rel=1e-2)
    assert eta.kappa == pytest.approx(mu.total_mass - 0.5 * 0.01 * 2.0, rel=1e-12)


def test_make_history_variants():
    assert isinstance(make_history(exponential(), DOM, 0.1), ExpModes)
    assert isinstance(make_history(indicator(), DOM, 0.1), SGrid)
    assert isinstance(make_history(exponential(), DOM, 0.1, "sgrid"), SGrid)
    with pytest.raises(ValueError):
        make_history(indicator(), DOM, 0.1, "exp_modes")
    with pytest.raises(ValueError):
        make_history(indicator(), DOM, 0.1, "other")


def test_profiles_match_between_variants():
    mu = exponential(1.0, 2.0)
    phi = DOM.mode(2).coeffs
    for prof in (constant_profile(), saturating_profile(3.0)):
        em = with_profile(ExpModes.from_kernel(mu, DOM), prof, phi)
        sg = with_profile(SGrid.build(mu, DOM, 0.002, growth=1.0, s_max=12.0), prof, phi)
        # the constant profile jumps at s = 0, costing SGrid half a cell: O(ds) relative error
        assert em.memory_force().coeffs == pytest.approx(sg.memory_force().coeffs, rel=5e-3)


def test_advance_history_wrapper():
    eta = ExpModes.from_kernel(exponential(), DOM)
    v = DOM.mode(1)
    assert np.allclose(advance_history(eta, v, 0.1).data, eta.advance(v.coeffs, 0.1).data)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 1.0), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_expmodes_dissipation_nonpositive(dt, v):
    eta = ExpModes.from_kernel(PronySum(((1.0, 0.7), (2.0, 9.0))), DOM)
    eta = eta.advance(np.array(v), dt).advance(-np.array(v), dt)
    assert eta.t_dissipation() <= 0.0
    assert eta.norm_sq() >= 0.0
