import math

import numpy as np
import pytest

from lqmkv import LqmkvProblem, solve
from lqmkv.apps import LiquidationParams, liq_mean_inventory, liquidation_problem, replace_params
from lqmkv.errors import DomainError, SimulationBlowUpError
from lqmkv.factors import ArithmeticBrownian
from lqmkv.simulate import (CounterRng, FeedbackPolicy, OpenLoopPolicy, ScaledPolicy, SimulationConfig,
                            ensemble_summary, estimate_cost, martingale_diagnostic, perturbation_test,
                            simulate_particles)


def _liq_policy(sol):
    return FeedbackPolicy(sol.problem, sol.law)


def test_zero_dynamics_keep_initial_states():
    prob = LqmkvProblem.create(2, 1, horizon=1.0, N=1.0, x0_mean=[1.0, -1.0], x0_cov=np.eye(2))
    ens = simulate_particles(prob, OpenLoopPolicy([0.0]), SimulationConfig(200, dt=0.01, mean_mode="empirical"))
    assert np.all(ens.states == ens.states[0])
    assert np.std(ens.states[0][:, 0]) > 0.5


def test_pure_drift_is_exact():
    prob = LqmkvProblem.create(1, 1, n_noises=0, horizon=2.0, C=1.0, N=1.0, x0_mean=30.0)
    cfg = SimulationConfig(10, dt=0.25, mean_mode="empirical")
    ens = simulate_particles(prob, OpenLoopPolicy([-1.0]), cfg)
    assert np.all(ens.states[-1] == 28.0)
    ens = simulate_particles(prob, OpenLoopPolicy([-1.0]), SimulationConfig(10, dt=1e-3, mean_mode="empirical"))
    assert np.max(np.abs(ens.states[-1] - 28.0)) < 1e-10


def test_terminal_only_cost():
    prob = LqmkvProblem.create(1, 1, n_noises=0, horizon=1.0, N=1.0, P=1.0, x0_mean=2.0)
    ens = simulate_particles(prob, OpenLoopPolicy([0.0]), SimulationConfig(8, dt=0.1, mean_mode="empirical"))
    est = estimate_cost(ens)
    assert est.mean == 4.0 and est.se == 0.0


def test_empirical_mean_is_particle_average(liq_solution):
    ens = simulate_particles(liq_solution.problem, _liq_policy(liq_solution),
                             SimulationConfig(500, dt=0.01, records=10))
    assert np.array_equal(ens.mean_states, ens.states.mean(axis=1))


def test_determinism_bitwise(liq_solution):
    cfg = SimulationConfig(300, dt=0.01, seed=42, records=5)
    a = simulate_particles(liq_solution.problem, _liq_policy(liq_solution), cfg)
    b = simulate_particles(liq_solution.problem, _liq_policy(liq_solution), cfg)
    for name in ("states", "controls", "factors", "cost", "running_cost"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_particle_noise_independent_of_ensemble_size(liq_solution):
    rng = CounterRng(7)
    small = rng.normals(0, 3, (10, 1))
    big = rng.normals(0, 3, (20, 1))[:10]
    assert np.array_equal(small, big)
    assert not np.array_equal(rng.normals(0, 4, (10, 1)), small)


def test_liquidation_terminal_mean_matches_closed_form(liq_solution, liq_params):
    ens = simulate_particles(liq_solution.problem, _liq_policy(liq_solution),
                             SimulationConfig(4000, seed=1, records=4))
    x = ens.states[-1, :, 0]
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - liq_mean_inventory(2.0, liq_params)) <= 3 * se


def test_liquidation_interior_mean_bias_is_first_order(liq_solution, liq_params):
    # the cross-sectional spread is tiny here, so the Euler bias is what shows; it halves with dt
    gaps = []
    for dt in (1e-3, 5e-4):
        ens = simulate_particles(liq_solution.problem, _liq_policy(liq_solution),
                                 SimulationConfig(200, dt=dt, antithetic=True, records=4))
        gaps.append([ens.states[r, :, 0].mean() - liq_mean_inventory(t, liq_params)
                     for r, t in enumerate(ens.times) if 0 < t < 2.0])
    ratio = np.array(gaps[0]) / np.array(gaps[1])
    assert np.all((1.8 <= ratio) & (ratio <= 2.2))
    assert np.max(np.abs(gaps[0])) < 0.01


def test_liquidation_cost_matches_value(liq_solution):
    est = estimate_cost(simulate_particles(liq_solution.problem, _liq_policy(liq_solution),
                                           SimulationConfig(4000, seed=2, records=2)))
    assert abs(est.mean - liq_solution.value) <= 3 * est.se


def test_scaled_policy_costs_more(liq_solution):
    base = _liq_policy(liq_solution)
    est = estimate_cost(simulate_particles(liq_solution.problem, ScaledPolicy(base, 1.2),
                                           SimulationConfig(4000, seed=3, records=2, mean_mode="empirical")))
    assert est.mean - liq_solution.value > 3 * est.se


def test_zero_perturbation_is_exactly_zero(liq_solution):
    res = perturbation_test(liq_solution.problem, liq_solution, [1.0], 0.0, SimulationConfig(200, dt=0.01))
    assert res.delta == 0.0 and res.delta_double == 0.0


def test_perturbation_is_quadratic(liq_solution):
    # antithetic pairs cancel the noise-linear part of the cost difference
    cfg = SimulationConfig(200, dt=5e-4, seed=5, records=2, antithetic=True)
    for eps in (0.05, 0.1):
        res = perturbation_test(liq_solution.problem, liq_solution, [1.0], eps, cfg)
        assert res.delta > 3 * res.delta_se
        assert 3.5 <= res.ratio <= 4.5


def test_no_trading_is_suboptimal_but_admissible(liq_solution):
    cfg = SimulationConfig(2000, dt=0.01, seed=6, records=10, mean_mode="empirical")
    diag = martingale_diagnostic(liq_solution.problem, liq_solution, OpenLoopPolicy([0.0]), cfg)
    assert diag.nondecreasing and not diag.flat


def test_optimal_liquidation_is_flat(liq_solution):
    cfg = SimulationConfig(2000, dt=0.01, seed=7, records=10)
    diag = martingale_diagnostic(liq_solution.problem, liq_solution, _liq_policy(liq_solution), cfg)
    assert diag.flat and diag.nondecreasing


def test_zero_problem_diagnostic():
    prob = LqmkvProblem.create(1, 1, horizon=1.0, N=1.0)
    sol = solve(prob, steps_per_unit=100)
    diag = martingale_diagnostic(prob, sol, FeedbackPolicy(prob, sol.law), SimulationConfig(100, dt=0.01))
    assert not np.any(diag.mean) and diag.flat and diag.nondecreasing


def test_blow_up_is_reported():
    prob = LqmkvProblem.create(1, 1, n_noises=0, horizon=1.0, B=1e200, N=1.0, x0_mean=1e200)
    with pytest.raises(SimulationBlowUpError) as info:
        simulate_particles(prob, OpenLoopPolicy([0.0]), SimulationConfig(4, dt=0.1, mean_mode="empirical"))
    assert info.value.time == 0.0


def test_dt_must_divide_horizon(liq_solution):
    with pytest.raises(DomainError):
        simulate_particles(liq_solution.problem, _liq_policy(liq_solution), SimulationConfig(4, dt=0.3))


def test_analytic_mode_needs_mean_path(liq_solution):
    with pytest.raises(DomainError):
        simulate_particles(liq_solution.problem, OpenLoopPolicy([0.0]), SimulationConfig(4, dt=0.1))


def test_mean_modes_agree(liq_solution):
    n = 10000
    pol = _liq_policy(liq_solution)
    a = estimate_cost(simulate_particles(liq_solution.problem, pol, SimulationConfig(n, dt=0.01, seed=8, records=2)))
    b = estimate_cost(simulate_particles(liq_solution.problem, pol,
                                         SimulationConfig(n, dt=0.01, seed=8, records=2, mean_mode="empirical")))
    assert abs(a.mean - b.mean) <= 3 * math.hypot(a.se, b.se)


def test_first_order_time_discretization():
    # a deterministic price keeps the comparison free of sampling noise; the policy is
    # deliberately suboptimal because at the optimum the O(dt) cost error cancels
    params = replace_params(LiquidationParams(), price=ArithmeticBrownian(10.0, 0.0, 0.0))
    prob = liquidation_problem(params)
    sol = solve(prob)
    pol = ScaledPolicy(FeedbackPolicy(prob, sol.law), 1.2)
    J = [simulate_particles(prob, pol, SimulationConfig(1, dt=dt, records=1, mean_mode="empirical")).cost[0]
         for dt in (0.02, 0.01, 0.005, 0.0025)]
    diffs = np.diff(J)
    ratios = diffs[:-1] / diffs[1:]
    assert np.all((1.6 <= ratios) & (ratios <= 2.4))


def test_optimal_cost_discretization_error_is_second_order():
    params = replace_params(LiquidationParams(), price=ArithmeticBrownian(10.0, 0.0, 0.0))
    prob = liquidation_problem(params)
    sol = solve(prob)
    pol = FeedbackPolicy(prob, sol.law)
    J = [simulate_particles(prob, pol, SimulationConfig(1, dt=dt, records=1)).cost[0]
         for dt in (0.01, 0.005, 0.0025)]
    assert 3.0 <= (J[1] - J[0]) / (J[2] - J[1]) <= 5.0


def test_resource_truncation_tail(res_solution):
    prob = res_solution.problem
    pol = FeedbackPolicy(prob, res_solution.law)
    base = simulate_particles(prob, pol, SimulationConfig(1000, seed=9, records=2))
    longer = simulate_particles(prob, pol, SimulationConfig(1000, seed=9, records=2, horizon=75.0))
    assert abs(estimate_cost(longer).mean - estimate_cost(base).mean) < base.tail_bound


def test_resource_state_energy_stable(res_solution):
    prob = res_solution.problem
    pol = FeedbackPolicy(prob, res_solution.law)
    e1 = simulate_particles(prob, pol, SimulationConfig(1000, seed=10, records=2)).state_energy
    e2 = simulate_particles(prob, pol, SimulationConfig(2000, seed=11, records=2)).state_energy
    assert math.isfinite(e1) and abs(e2 / e1 - 1.0) < 0.1


def test_liquidation_rate_plus_half_price_martingale(liq_solution):
    # under a martingale price E[alpha_t + S_t / 2 - q int_0^t X ds] does not move
    dt = 0.002
    ens = simulate_particles(liq_solution.problem, _liq_policy(liq_solution),
                             SimulationConfig(2000, dt=dt, seed=12, records=1000))
    X = ens.states[:, :, 0]
    integral = np.concatenate([np.zeros((1, X.shape[1])), np.cumsum(0.5 * dt * (X[1:] + X[:-1]), axis=0)])
    proc = ens.controls[:, :, 0] + 0.5 * ens.factors[:, :, 0] - 1.0 * integral
    drift = proc[::100] - proc[0]
    se = drift.std(axis=1, ddof=1) / math.sqrt(drift.shape[1])
    assert np.all(np.abs(drift.mean(axis=1)) <= 3 * se + 0.05)


def test_summary_layout(liq_solution):
    ens = simulate_particles(liq_solution.problem, _liq_policy(liq_solution), SimulationConfig(100, dt=0.01, records=4))
    header, rows = ensemble_summary(ens)
    assert header == ["t", "mean_x0", "q05_x0", "q95_x0"]
    assert len(rows) == 5 and rows[0][1:] == [30.0, 30.0, 30.0]
