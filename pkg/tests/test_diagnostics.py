import math

import numpy as np
import pytest

from viscomem.diagnostics import (CSV_COLUMNS, EnergyRecorder, InequalityLog, absorbing_radius, aux_functionals,
                                  default_eps_delta, default_sigma, dissipation_residual, energy, fit_decay,
                                  lyapunov, make_report, radius_from)
from viscomem.history import make_history
from viscomem.integrator import StepConfig, SystemState, evolve, rest_state, step
from viscomem.kernels import PronySum, certify_theta, exponential, geometric_steps, indicator
from viscomem.nonlinearity import cubic, double_well, zero
from viscomem.spectral import DomainSpec, SpectralField, apply_A_power, integrate, random_field

DOM = DomainSpec.box(math.pi, 16)


def random_state(rng, kernel=PronySum(((1.0, 1.0), (2.0, 3.0))), dom=DOM, dt=0.05, amp=1.0):
    eta = make_history(kernel, dom, dt)
    eta = eta.with_data(amp * rng.standard_normal(eta.data.shape) * (dom.lam / dom.lambda1) ** -1.5)
    return SystemState(0.0, random_field(dom, rng, amp), random_field(dom, rng, amp), eta, dom.zeros())


def test_defaults():
    assert default_sigma(0.0) == pytest.approx(1 / 3)
    assert default_sigma(3.5) == pytest.approx(0.25)
    assert default_eps_delta(2.0, 1.0) == (0.25, 0.125)
    assert default_eps_delta(0.0, 1.0)[0] == 0.0


def test_energy_trivial_values():
    eta = make_history(exponential(), DOM, 0.1)
    assert energy(rest_state(DOM.zeros(), eta)) == 0.0
    assert energy(rest_state(DOM.mode(1), eta)) == pytest.approx(0.5)


def test_energy_spectral_vs_quadrature():
    rng = np.random.default_rng(0)
    z = random_state(rng)
    # ||u||_1^2 = int (A u) u on the grid, same for v; the history part is a weighted sum of such terms
    quad = sum(integrate(DOM, apply_A_power(w, 1).grid() * w.grid()) for w in (z.u, z.v))
    eta = z.eta
    for j, wj in enumerate(eta.weights):
        f = SpectralField(DOM, eta.data[j])
        quad += wj * integrate(DOM, apply_A_power(f, 1).grid() * f.grid())
    assert energy(z) == pytest.approx(0.5 * quad, abs=1e-10)


def test_lyapunov_zero_and_lower_bound():
    eta = make_history(exponential(), DOM, 0.1)
    assert lyapunov(rest_state(DOM.zeros(), eta), cubic(), DOM.zeros(), 2.0) == 0.0
    rng = np.random.default_rng(1)
    nl = double_well(nu=0.5, m_f=1.0)
    h = random_field(DOM, rng)
    c_fh = nl.m_f * DOM.volume + h.norm(-1) ** 2 / nl.nu
    for _ in range(200):
        z = random_state(rng, amp=rng.uniform(0.1, 3.0))
        assert nl.nu / 4 * z.phase_norm_sq() - c_fh <= lyapunov(z, nl, h, rng.uniform(0, 4))


def test_dissipation_residual_stationary_and_memoryless():
    eta = make_history(exponential(), DOM, 0.1)
    z = rest_state(DOM.zeros(), eta)
    assert dissipation_residual(z, z, 0.1, cubic(), DOM.zeros(), 2.0) == 0.0
    # kappa = 0 with rho = 0 and f = 0: quadratic energy, the midpoint rule is exact
    rng = np.random.default_rng(2)
    z0 = random_state(rng, kernel=PronySum(()))
    z1 = step(z0, StepConfig(0.1), zero(), DOM.zeros())
    assert dissipation_residual(z0, z1, 0.1, zero(), DOM.zeros(), 0.0) < 1e-12
    assert z1.eta.t_dissipation() == 0.0


def test_dissipation_residual_second_order():
    rng = np.random.default_rng(3)
    z0 = random_state(rng)
    nl = cubic()
    res = []
    for dt in (0.02, 0.01, 0.005):
        z = SystemState(0.0, z0.u, z0.v, z0.eta, z0.a)
        z1 = step(z, StepConfig(dt, rho=1.0), nl, DOM.zeros())
        res.append(dissipation_residual(z, z1, dt, nl, DOM.zeros(), 1.0))
    assert all(math.log2(a / b) >= 1.8 for a, b in zip(res, res[1:]))


def test_aux_functionals_zero_history():
    rng = np.random.default_rng(4)
    z = random_state(rng)
    z = SystemState(0.0, z.u, z.v, z.eta.zeros_like(), z.a)
    aux = aux_functionals(z, 1.0, 1 / 3, 0.5, 0.25)
    assert aux.Psi == 0.0 and aux.Psi_s == 0.0


def test_phi_closed_form_single_mode():
    eta = make_history(exponential(), DOM, 0.1)
    z = SystemState(0.0, DOM.mode(1, 2.0), DOM.mode(1, 0.5), eta, DOM.zeros())
    aux = aux_functionals(z, 0.0, 0.0, 0.0, 0.25)
    # rho = 0: Phi = |u|_1^2/2 + <v,u>_1 + <v,u> = 2 + 1 + 1
    assert aux.Phi == pytest.approx(4.0)
    assert aux.Phi_s == pytest.approx(2.0 + 1.0)


@pytest.mark.parametrize("kernel", [PronySum(((1.0, 1.0), (2.0, 3.0))), indicator(), geometric_steps()])
def test_psi_bound_and_sandwich_random_states(kernel):
    rng = np.random.default_rng(5)
    theta = certify_theta(kernel)
    for _ in range(100):
        z = random_state(rng, kernel, amp=rng.uniform(0.1, 5.0))
        rho = rng.uniform(0, 4)
        sigma = default_sigma(rho)
        aux = aux_functionals(z, rho, sigma, 1 / (2 * theta), 0.25)
        assert 0.0 <= aux.Psi <= theta * z.eta.norm_sq() * (1 + 1e-12) <= 2 * theta * energy(z) * (1 + 1e-12)
        assert 0.5 * aux.E_s <= aux.Lambda_s * (1 + 1e-12)
        assert aux.Lambda_s <= 2 * aux.E_s * (1 + 1e-12)


def test_absorbing_radius_closed_forms():
    assert radius_from(1.0, 0.0, 1.0) == 4.0
    assert radius_from(0.5, 1.0, 0.0) == 16.0
    unit = DomainSpec.box(1.0, 8)
    h = unit.mode(1, math.pi)  # ||h||_{-1} = 1 on (0, 1)
    assert absorbing_radius(cubic(), h) == pytest.approx(4.0)
    assert absorbing_radius(cubic(nu=0.5, m_f=1.0), unit.zeros()) == 16.0
    assert absorbing_radius(cubic(), DOM.zeros()) == 0.0
    with pytest.raises(ValueError):
        radius_from(0.0, 1.0, 1.0)


def test_fit_decay_synthetic():
    t = np.linspace(0, 20, 401)
    assert fit_decay(t, 3 * np.exp(-0.7 * t)).omega == pytest.approx(0.7, rel=0.02)
    fit = fit_decay(t, 3 * np.exp(-0.7 * t) + 0.2)
    assert fit.omega == pytest.approx(0.7, rel=0.02) and fit.plateau == pytest.approx(0.2, rel=1e-6)
    assert fit_decay(t, np.exp(0.3 * t)).omega <= 0
    flat = fit_decay(t, np.full_like(t, 2.5))
    assert flat.omega == 0.0 and flat.plateau == 2.5


def test_fit_decay_deep_decay_and_errors():
    t = np.linspace(0, 60, 1201)
    # most of the tail sits below round-off; only live points are fitted
    assert fit_decay(t, np.exp(-0.9 * t)).omega == pytest.approx(0.9, rel=0.02)
    with pytest.raises(ValueError):
        fit_decay(t[:4], np.exp(-t[:4]))
    with pytest.raises(ValueError):
        fit_decay(t, t[:-1])


def test_recorder_rows_and_log():
    rng = np.random.default_rng(6)
    mu = PronySum(((1.0, 1.0), (2.0, 3.0)))
    z0 = random_state(rng, mu)
    theta = certify_theta(mu)
    nl = cubic()
    rec = EnergyRecorder(nl, DOM.zeros(), 2.0, theta=theta, kappa=mu.total_mass, every=5)
    evolve(z0, 1.0, StepConfig(0.05, rho=2.0), nl, DOM.zeros(), [rec])
    assert [r.t for r in rec.reports] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    assert rec.reports[0].diss_residual == 0.0
    assert tuple(type(rec.reports[0]).__dataclass_fields__) == CSV_COLUMNS
    first = make_report(z0, nl, DOM.zeros(), 2.0, rec.sigma, rec.eps, rec.delta)
    assert first.row() == rec.reports[0].row()
    assert all(rec.log.passed().values())
    # discrete Psi-rate inequality: dPsi/dt + ||eta||^2/2 <= 2 Theta^2 kappa ||v||_1^2
    assert rec.log.psi_rate <= 0.0


def test_recorder_stride_uses_previous_step():
    rng = np.random.default_rng(7)
    z0 = random_state(rng)
    nl = cubic()
    a = EnergyRecorder(nl, DOM.zeros(), 1.0, every=1)
    b = EnergyRecorder(nl, DOM.zeros(), 1.0, every=1)
    evolve(z0, 1.0, StepConfig(0.05, rho=1.0), nl, DOM.zeros(), [a])
    evolve(z0, 1.0, StepConfig(0.05, rho=1.0), nl, DOM.zeros(), [b], stride=4)
    by_t = {round(r.t, 9): r.diss_residual for r in a.reports}
    for r in b.reports[1:]:
        assert r.diss_residual == pytest.approx(by_t[round(r.t, 9)], rel=1e-12)


def test_inequality_log_thresholds():
    log = InequalityLog(lyapunov_increase=2e-8, t_sign=0.0, psi_bound=-1.0, sandwich=-1.0)
    assert log.passed() == {"lyapunov_monotone": False, "t_dissipation_sign": True, "psi_bound": True,
                            "lambda_sandwich": True}
