import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from lqmkv import solve
from lqmkv.apps import (FIGURE1_NUS, FIGURE2_QS, LiquidationParams, ResourceParams, figure1_data, figure2_data,
                        liq_control_gap, liq_K, liq_K_nu, liq_mean_inventory, liq_omega, liq_optimal_control,
                        liq_pi, liquidation_problem, replace_params, res_gains, res_mean_reserve,
                        res_optimal_control, res_stationary_reserve, resource_problem)
from lqmkv.control import mean_state_ode, optimal_control
from lqmkv.factors import ArithmeticBrownian, GeometricBrownian, OrnsteinUhlenbeck
from lqmkv.simulate import FeedbackPolicy, SimulationConfig, simulate_particles


# liquidation closed forms

def test_K_nu_initial_value():
    sh, ch = math.sinh(2.0), math.cosh(2.0)
    assert liq_K_nu(0.0, 10.0, 1.0, 1.0, 2.0) == pytest.approx((sh + 11 * ch) / (11 * sh + ch), abs=1e-14)
    assert liq_K_nu(0.0, 10.0, 1.0, 1.0, 2.0) == pytest.approx(1.03099, abs=1e-5)


def test_terminal_gains():
    assert liq_K(2.0, 10.0, 1.0, 2.0) == 10.0
    assert liq_K_nu(2.0, 10.0, 1.0, 1.0, 2.0) == 11.0
    assert liq_K_nu(0.7, 3.0, 2.0, 0.0, 2.0) == liq_K(0.7, 3.0, 2.0, 2.0)


def test_small_q_limit():
    for t in (0.0, 0.8, 1.7):
        assert liq_K_nu(t, 10.0, 1e-10, 1.0, 2.0) == pytest.approx(11.0 / (11.0 * (2.0 - t) + 1.0), abs=1e-6)


def test_large_arguments_do_not_overflow():
    assert math.isfinite(liq_K(0.0, 10.0, 2500.0, 2.0))
    assert liq_K(0.0, 10.0, 2500.0, 2.0) == pytest.approx(50.0, rel=1e-12)
    assert 0.0 < liq_pi(2.0, 10.0, 2500.0) < 1e-40


def test_omega_pi_values():
    assert liq_omega(0.0, 10.0, 1.0, 1.0) == 1.0 and liq_pi(0.0, 10.0, 1.0, 1.0) == 1.0
    assert liq_pi(2.0, 10.0, 1.0, 1.0) == pytest.approx(1.0 / (math.cosh(2.0) + 11 * math.sinh(2.0)), rel=1e-13)
    assert liq_pi(2.0, 10.0, 1.0, 1.0) == pytest.approx(0.02291, abs=1e-5)
    taus = np.linspace(0.0, 3.0, 61)
    pis = [liq_pi(s, 10.0, 1.0, 1.0) for s in taus]
    oms = [liq_omega(s, 10.0, 1.0, 1.0) for s in taus]
    assert np.all(np.diff(pis) < 0)
    assert all(0.0 < w <= 1.0 for w in oms + pis)


@pytest.mark.parametrize("t,s", [(0.0, 2.0), (0.3, 1.1), (1.2, 1.9)])
def test_pi_is_exponential_of_integrated_gain(t, s):
    integral, _ = quad(lambda r: liq_K_nu(r, 10.0, 1.0, 1.0, 2.0), t, s, epsabs=1e-13, epsrel=1e-12)
    ratio = liq_pi(2.0 - t, 10.0, 1.0, 1.0) / liq_pi(2.0 - s, 10.0, 1.0, 1.0)
    assert ratio == pytest.approx(math.exp(-integral), abs=1e-10)


def test_mean_inventory_reference_values(liq_params):
    assert liq_mean_inventory(0.0, liq_params) == 30.0
    assert 1.51 <= liq_mean_inventory(2.0, liq_params) <= 1.53
    q0 = replace_params(liq_params, q=0.0)
    # linear in t with denominator 1 + (p + nu) T = 23
    assert liq_mean_inventory(1.0, q0) == pytest.approx(30 * (1 - 10.5 / 23) - 5 / 23, abs=1e-12)
    sol = solve(liquidation_problem(q0), allow_unverified=True)
    grid, path = mean_state_ode(sol.problem, sol.law)
    assert path[np.argmin(np.abs(grid - 1.0)), 0] == pytest.approx(16.0869565, abs=1e-6)


def test_mean_inventory_quadrature_agrees_with_closed_form(liq_params):
    from lqmkv.apps import _mean_inventory_quadrature

    for t in (0.4, 1.0, 2.0):
        assert _mean_inventory_quadrature(t, liq_params) == pytest.approx(liq_mean_inventory(t, liq_params),
                                                                         abs=1e-8)


def test_figure_shapes():
    ts, f1 = figure1_data()
    _, f2 = figure2_data()
    assert f1.shape == (ts.size, len(FIGURE1_NUS)) and f2.shape == (ts.size, len(FIGURE2_QS))
    for col in np.hstack([f1, f2]).T:
        assert np.min(np.diff(col, 2)) >= -1e-9
    inner = (ts > 0) & (ts < ts[-1])
    # a smaller permanent impact sells faster; a larger running penalty sells faster
    assert np.all(np.diff(f1[inner], axis=1) > 0)
    assert np.all(np.diff(f2[inner], axis=1) < 0)


def test_infinite_terminal_penalty_limit(liq_params):
    params = replace_params(liq_params, p=1e6)
    r, T, x0 = 1.0, 2.0, 30.0
    for t in (0.5, 1.0, 1.5, 2.0):
        limit = x0 * (math.cosh(r * t) - math.cosh(r * T) / math.sinh(r * T) * math.sinh(r * t))
        assert liq_mean_inventory(t, params) == pytest.approx(limit, abs=1e-3)


def test_no_impact_control(liq_params):
    params = replace_params(liq_params, nu=0.0)
    for t, X, S in [(0.0, 30.0, 10.0), (0.9, 12.0, 11.3), (1.8, 2.0, 8.0)]:
        want = -liq_K(t, 10.0, 1.0, 2.0) * X - 0.5 * S * liq_pi(2.0 - t, 10.0, 1.0)
        assert liq_optimal_control(t, X, S, params) == pytest.approx(want, abs=1e-9)


def test_control_gap_display(liq_params):
    base = replace_params(liq_params, nu=0.0)
    for t, X, S in [(0.0, 30.0, 10.0), (0.7, 18.0, 10.4), (1.5, 4.0, 9.2)]:
        gap = liq_optimal_control(t, X, S, liq_params) - liq_optimal_control(t, X, S, base)
        assert gap == pytest.approx(liq_control_gap(t, liq_params), abs=1e-8)


@pytest.mark.parametrize("price", [ArithmeticBrownian(10.0, 0.0, 1.0), ArithmeticBrownian(10.0, 0.5, 1.0),
                                   OrnsteinUhlenbeck(10.0, 2.0, 8.0, 1.0)], ids=["abm", "abm-drift", "ou"])
def test_liquidation_control_matches_generic_along_paths(price):
    params = replace_params(LiquidationParams(), price=price)
    sol = solve(liquidation_problem(params))
    ens = simulate_particles(sol.problem, FeedbackPolicy(sol.problem, sol.law),
                             SimulationConfig(2, dt=0.01, seed=1, records=2))
    for r, t in enumerate(ens.times):
        X, f = ens.states[r], ens.factors[r]
        xbar = np.array([liq_mean_inventory(t, params)])
        generic = optimal_control(sol.law, t, X, xbar, f)[:, 0]
        closed = [liq_optimal_control(t, X[i, 0], f[i, 0], params, tol=1e-9) for i in range(X.shape[0])]
        assert np.max(np.abs(generic - closed)) <= 1e-6
    grid, path = mean_state_ode(sol.problem, sol.law)
    want = [liq_mean_inventory(t, params) for t in grid[::100]]
    assert np.max(np.abs(path[::100, 0] - want)) <= 1e-6


@settings(max_examples=15, deadline=None)
@given(p=st.floats(0.0, 20.0), q=st.floats(0.01, 4.0), nu=st.floats(0.0, 3.0))
def test_mean_inventory_curvature_property(p, q, nu):
    # the mean inventory solves E'' = q E, so it is convex exactly while it stays nonnegative
    params = LiquidationParams(p=p, q=q, nu=nu)
    h = 0.05
    ts = np.linspace(0.0, 2.0, 41)
    vals = np.array([liq_mean_inventory(t, params) for t in ts])
    curv = np.diff(vals, 2) / h**2
    assert np.max(np.abs(curv - q * vals[1:-1])) <= 5e-3 * q * np.max(np.abs(vals))
    if np.all(vals >= 0):
        assert np.min(np.diff(vals, 2)) >= -1e-9


# resource closed forms

def test_gain_reference_values(res_params):
    k_eta, lam = res_gains(res_params)
    a = 0.41
    assert k_eta == pytest.approx((-a + math.sqrt(a * a + 2 * a / 1.5)) / 2, abs=1e-14)
    assert k_eta > 0 and lam > 0
    assert k_eta == pytest.approx(0.21771937, abs=1e-8)
    assert res_gains(replace_params(res_params, c=1e-12))[0] < 1e-11


def test_gain_identity(res_params):
    p = res_params
    k, lam = res_gains(p)
    s2 = p.sigma**2
    lhs = 2 * (p.delta + p.eps) * lam * (p.rho + lam)
    rhs = p.c * (p.rho - s2) * (k + p.rho) / (k + p.rho - s2)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_stationary_reserve_eps_independent(res_params):
    vals = [res_stationary_reserve(replace_params(res_params, eps=e)) for e in (0.1, 0.5, 1.0)]
    assert max(vals) - min(vals) <= 1e-10
    assert vals[1] == pytest.approx(0.53329439, abs=1e-8)


def test_large_variation_penalty_limit(res_params):
    p = replace_params(res_params, eta=1e6)
    assert res_stationary_reserve(p) == pytest.approx(p.x0 - p.price.x0 / p.c, abs=1e-3)


def test_mean_reserve_start_and_long_run(res_params):
    assert res_mean_reserve(0.0, res_params) == 1.0
    _, lam = res_gains(res_params)
    assert res_mean_reserve(40.0 / lam, res_params) == pytest.approx(res_stationary_reserve(res_params), abs=1e-9)


def test_control_without_price_or_rent():
    p = ResourceParams(x0=0.0, price=ArithmeticBrownian(0.0, 0.0, 0.0))
    k, lam = res_gains(p)
    assert res_optimal_control(1.0, 0.3, 0.1, 0.0, p) == pytest.approx(k * 0.2 + lam * 0.1, abs=1e-15)


def test_constant_price_brackets(res_params):
    p = replace_params(res_params, price=ArithmeticBrownian(0.5, 0.0, 0.0))
    k, lam = res_gains(p)
    X, Xbar = 0.9, 0.7
    scale = p.rho / (p.rho + lam) / (2 * (p.delta + p.eps))
    want = k * (X - Xbar) + lam * Xbar + (0.5 - p.c * p.x0) * scale
    assert res_optimal_control(3.0, X, Xbar, 0.5, p) == pytest.approx(want, abs=1e-14)


def test_long_run_extraction_stops(res_params):
    _, lam = res_gains(res_params)
    a0 = res_optimal_control(0.0, 1.0, 1.0, res_params.price.x0, res_params)
    t = 10.0 / lam
    xbar = res_mean_reserve(t, res_params)
    assert abs(res_optimal_control(t, xbar, xbar, res_params.price.mean(t), res_params)) <= 1e-4 * abs(a0)


@pytest.mark.parametrize("price", [ArithmeticBrownian(0.5, 0.0, 0.2), OrnsteinUhlenbeck(0.5, 1.0, 0.8, 0.2),
                                   GeometricBrownian(0.5, 0.1, 0.2)], ids=["abm", "ou", "gbm"])
def test_resource_generic_agreement(price):
    params = replace_params(ResourceParams(), price=price)
    sol = solve(resource_problem(params))
    grid, path = mean_state_ode(sol.problem, sol.law)
    sel = grid <= 20.0
    want = np.array([res_mean_reserve(t, params) for t in grid[sel][::100]])
    assert np.max(np.abs(path[sel][::100, 0] - want)) <= 1e-6
    rng = np.random.default_rng(0)
    for t in (0.0, 2.5, 7.0):
        X = rng.normal(1.0, 0.3, size=(4, 1))
        P = rng.normal(float(price.mean(t)), 0.2, size=(4, 1))
        xbar = np.array([res_mean_reserve(t, params)])
        generic = optimal_control(sol.law, t, X, xbar, P)[:, 0]
        closed = res_optimal_control(t, X[:, 0], xbar[0], P[:, 0], params)
        assert np.max(np.abs(generic - closed)) <= 1e-6
