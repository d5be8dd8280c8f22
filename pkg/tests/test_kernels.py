import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as spi

from viscomem.kernels import (CertificationFailure, DivergentKernelError, PiecewiseConstant, PronySum,
                              TabulatedMonotone, certify_nece, certify_theta, cross_check_equivalence,
                              exponential, geometric_steps, indicator, tabulate, total_mass, zero_kernel)


def test_total_mass_closed_forms():
    assert total_mass(exponential()) == 1.0
    assert total_mass(PronySum(((2.0, 4.0),))) == 0.5
    assert total_mass(indicator()) == 1.0
    assert total_mass(zero_kernel()) == 0.0
    assert zero_kernel().is_zero
    assert geometric_steps().total_mass == pytest.approx(1.0)


def test_tabulated_mass_matches_quadrature():
    fn = lambda s: 1.0 / (1.0 + s) ** 2
    mu = tabulate(fn, 1e-6, 1e3, 2000, "power")
    assert mu.total_mass == pytest.approx(1.0, rel=1e-4)
    s = np.array([0.5, 3.0, 40.0])
    exact = 1.0 / (1.0 + s)
    assert np.allclose(mu.tail(s), exact, rtol=1e-4)


def test_tabulated_singular_origin_mass():
    # s^(-1/2) e^{-s} has mass Gamma(1/2) = sqrt(pi)
    fn = lambda s: s**-0.5 * np.exp(-s)
    mu = tabulate(fn, 1e-6, 40.0, 3000, "exp", tail_param=1.0, origin_exponent=0.5)
    assert mu.total_mass == pytest.approx(math.sqrt(math.pi), rel=1e-3)


def test_divergent_tails_raise():
    with pytest.raises(DivergentKernelError):
        TabulatedMonotone(np.array([1.0, 2.0]), np.array([1.0, 0.5]), "power", 1.0)
    with pytest.raises(DivergentKernelError):
        TabulatedMonotone(np.array([1.0, 2.0]), np.array([1.0, 0.5]), "exp", -1.0)


@pytest.mark.parametrize("make", [
    lambda: PronySum(((1.0, 0.0),)),
    lambda: PiecewiseConstant(np.array([1.0, 2.0]), np.array([1.0, 2.0])),
    lambda: TabulatedMonotone(np.array([1.0, 2.0]), np.array([1.0, 2.0])),
])
def test_invalid_kernels_rejected(make):
    with pytest.raises(ValueError):
        make()


@pytest.mark.parametrize("mu", [
    PronySum(((1.0, 0.5), (3.0, 2.0))),
    PiecewiseConstant(np.array([0.5, 1.5, 4.0]), np.array([3.0, 1.0, 0.25])),
    geometric_steps(0.3, 0.7),
])
def test_tail_against_quadrature(mu):
    pts = [b for b in np.asarray(mu.breakpoints)[:50]]
    for s in (0.0, 0.2, 1.0, 2.5):
        val, _ = spi.quad(lambda x: float(mu.left(np.array([x]))[0]), s, 60.0, points=[p for p in pts if s < p < 60.0],
                          limit=400, epsabs=1e-13)
        assert float(mu.tail(np.array([s]))[0]) == pytest.approx(val, abs=1e-9)


def test_tail_monotone_convex_by_differences():
    for mu in (exponential(), tabulate(lambda s: np.exp(-np.sqrt(s)), 1e-6, 1e3, 2000, "power")):
        s = np.geomspace(1e-4, 50, 4000)
        I = mu.tail(s)
        assert np.all(np.diff(I) <= 1e-15)
        slopes = np.diff(I) / np.diff(s)
        assert np.all(np.diff(slopes) >= -1e-9)


def test_theta_exponential_is_one():
    assert certify_theta(exponential()) == pytest.approx(1.0, abs=1e-12)


def test_theta_indicator_is_one():
    assert certify_theta(indicator()) == pytest.approx(1.0, rel=1e-2)


def test_theta_inverse_square_fails_with_witness():
    mu = tabulate(lambda s: 1.0 / (1.0 + s) ** 2, 1e-6, 1e3, 2000, "power")
    with pytest.raises(CertificationFailure) as info:
        certify_theta(mu)
    w = info.value.witness
    assert w > 1.0
    # the ratio I/mu = 1 + s is what blows up
    assert info.value.value == pytest.approx(1 + w, rel=1e-2)


def test_theta_needs_mass():
    with pytest.raises(ValueError):
        certify_theta(zero_kernel())


def test_theta_step_kernel_is_two():
    # on (n-1, n], mu = 2^-n and I(s) = 2^-n (n - s + 1); the sup 2 sits just past each jump
    assert certify_theta(geometric_steps()) == pytest.approx(2.0, rel=1e-2)


def test_nece_exponential():
    assert certify_nece(exponential(), 1.0) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(CertificationFailure) as info:
        certify_nece(exponential(), 2.0)
    sigma, s = info.value.witness
    assert sigma > 0


def _brute_nece(mu, delta):
    sig = np.concatenate([[0.0], np.geomspace(1e-4, 60, 600)])
    s = np.geomspace(1e-4, 60, 600)
    S, G = np.meshgrid(s, sig)
    return float(np.max(mu.left(S + G) * np.exp(delta * G) / mu.left(S)))


def test_nece_two_term_prony():
    # (e^{-s} + e^{-3s-2 sigma}) / (e^{-s} + e^{-3s}) <= 1 after the e^{sigma} factor, so C = 1
    mu = PronySum(((1.0, 1.0), (1.0, 3.0)))
    C = certify_nece(mu, 1.0)
    assert C == pytest.approx(_brute_nece(mu, 1.0), rel=1e-2)
    assert C == pytest.approx(1.0, rel=1e-2)


def test_nece_two_term_prony_small_delta_brute_force():
    mu = PronySum(((1.0, 1.0), (2.0, 3.0)))
    assert certify_nece(mu, 0.5) == pytest.approx(max(1.0, _brute_nece(mu, 0.5)), rel=1e-2)


def test_nece_step_kernel_needs_c_above_one():
    # for s just past a jump, mu(s + sigma) stays equal to mu(s) for sigma < 1,
    # so e^{delta sigma} alone exceeds 1
    C = certify_nece(geometric_steps(), 0.3)
    assert C > 1.0
    assert C == pytest.approx(max(1.0, _brute_nece(geometric_steps(), 0.3)), rel=2e-2)


def test_cross_check_pass_and_fail():
    rep = cross_check_equivalence(exponential())
    assert rep.agree and rep.theta_ok and rep.nece_ok
    bad = cross_check_equivalence(tabulate(lambda s: 1.0 / (1.0 + s) ** 2, 1e-6, 1e3, 2000, "power"))
    assert bad.agree and not bad.theta_ok and not bad.nece_ok
    assert bad.theta_witness is not None
    steps = cross_check_equivalence(geometric_steps())
    assert steps.agree and steps.theta_ok
    assert all(c is None or c > 1.0 for _, c in steps.nece)


def test_theta_bound_holds_on_dense_grid():
    for mu in (PronySum(((1.0, 0.3), (5.0, 7.0))), indicator(2.0, 0.5), geometric_steps(0.6, 0.4)):
        theta = certify_theta(mu)
        s = np.geomspace(1e-6, 1e3, 10_000) * mu.s_scale
        s = s[mu.right(s) > 0]
        assert np.all(mu.tail(s) <= theta * mu.right(s) * 1.01)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 5.0), st.floats(0.1, 5.0)), min_size=1, max_size=3),
       st.floats(0.2, 4.0))
def test_prony_closure(terms, factor):
    # I/mu of a Prony sum is a mediant of the 1/d_j, so Theta <= max 1/d_j;
    # scaling leaves it unchanged and adding a term keeps the same kind of bound
    mu = PronySum(tuple(terms))
    theta = certify_theta(mu)
    assert theta <= 1.0 / min(d for _, d in terms) * (1 + 1e-9)
    assert certify_theta(mu.scaled(factor)) == pytest.approx(theta, rel=1e-9)
    both = mu + exponential(1.0, 2.0)
    assert certify_theta(both) <= max(1.0 / min(d for _, d in terms), 0.5) * (1 + 1e-9)
