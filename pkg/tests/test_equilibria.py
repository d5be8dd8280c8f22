import math

import numpy as np
import pytest

from viscomem.equilibria import (Equilibrium, default_seeds, distance_to_S, multi_start, residual_norm,
                                 solve_equilibrium, stationarity_check)
from viscomem.history import make_history
from viscomem.integrator import StepConfig, SystemState, rest_state
from viscomem.kernels import exponential
from viscomem.nonlinearity import cubic, double_well, zero
from viscomem.spectral import DomainSpec, random_field

DOM = DomainSpec.box(math.pi, 16)
WIDE = DomainSpec.box(2 * math.pi, 16)


def test_linear_equilibrium_is_forcing():
    h = DOM.mode(1)
    eq = solve_equilibrium(DOM.mode(2, 0.3), zero(), h)
    assert eq.converged and eq.residual <= 1e-10
    assert np.allclose(eq.u_star.coeffs, h.coeffs, atol=1e-12)


def test_cubic_trivial_root():
    rng = np.random.default_rng(0)
    for _ in range(5):
        eq = solve_equilibrium(random_field(DOM, rng, 0.3), cubic(), DOM.zeros())
        assert eq.converged and eq.u_star.norm(1) < 1e-8


def test_double_well_on_unit_eigenvalue_interval():
    # lam_1 = 1 makes the linearisation at 0 singular; all seeds must settle at u = 0
    rng = np.random.default_rng(1)
    S = multi_start(default_seeds(DOM, rng), double_well(m_f=0.25), DOM.zeros())
    assert len(S) == 1
    assert S[0].u_star.norm(1) < 1e-2
    assert S[0].residual < 1e-10


def test_double_well_wide_interval_three_roots():
    rng = np.random.default_rng(2)
    nl = double_well(m_f=0.25)
    S = multi_start(default_seeds(WIDE, rng), nl, WIDE.zeros(), jobs=2)
    norms = sorted(e.u_star.norm(1) for e in S)
    assert len(S) == 3
    assert norms[0] < 1e-12
    assert norms[1] == pytest.approx(norms[2], rel=1e-8)
    for e in S:
        assert residual_norm(e.u_star.coeffs, nl, np.zeros(WIDE.shape), WIDE) < 1e-10
    # the two nontrivial roots are mirror images
    a, b = [e for e in S if e.u_star.norm(1) > 1e-6]
    assert np.allclose(a.u_star.coeffs, -b.u_star.coeffs, atol=1e-9)


def test_multi_start_is_order_stable():
    nl = double_well(m_f=0.25)
    seeds = default_seeds(WIDE, np.random.default_rng(3))
    one = multi_start(seeds, nl, WIDE.zeros())
    two = multi_start(list(reversed(seeds)), nl, WIDE.zeros(), jobs=3)
    # the zero root is degenerate (lam_2 = 1 at L = 2 pi), so it is only located to ~sqrt(tol)
    assert [e.u_star.norm(1) for e in one] == pytest.approx([e.u_star.norm(1) for e in two], abs=1e-6)


def test_solve_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        solve_equilibrium(DOM.zeros(), cubic(), DOM.zeros(), tol=0.0)


def test_distance_to_S():
    eta = make_history(exponential(), DOM, 0.1)
    star = Equilibrium(DOM.mode(1, 0.4), 0.0)
    assert distance_to_S(rest_state(star.u_star, eta), [star]) == 0.0
    z = SystemState(0.0, star.u_star, DOM.mode(2, 0.5), eta, DOM.zeros())
    assert distance_to_S(z, [star]) >= z.v.norm(1)
    with pytest.raises(ValueError):
        distance_to_S(z, [])


def test_stationarity_checks():
    eta = make_history(exponential(), DOM, 0.1)
    cfg = StepConfig(0.1, rho=2.0)
    zero_eq = solve_equilibrium(DOM.zeros(), cubic(), DOM.zeros())
    rep = stationarity_check(zero_eq, cubic(), DOM.zeros(), eta, cfg)
    assert rep.passed and rep.drift == 0.0
    h = DOM.mode(1, 0.5)
    lin = solve_equilibrium(DOM.zeros(), zero(), h)
    assert stationarity_check(lin, zero(), h, eta, cfg).drift < 1e-13
    nl = double_well(m_f=0.25)
    for e in multi_start(default_seeds(WIDE, np.random.default_rng(4)), nl, WIDE.zeros()):
        rep = stationarity_check(e, nl, WIDE.zeros(), make_history(exponential(), WIDE, 0.1), cfg)
        assert rep.passed and rep.drift <= rep.bound
