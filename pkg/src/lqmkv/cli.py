"""Command-line front end: ``lqmkv <command> <scenario> [flags]``.

Exit codes: 0 success, 1 a verification check failed, 2 the scenario is
invalid, 3 the solver raised.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import apps
from .control import mean_state_ode, solve
from .errors import LqmkvError, ScenarioError
from .io import fmt, write_csv, write_json
from .model import hat_coefficients
from .riccati import riccati_rhs_K, riccati_rhs_Lambda
from .scenario import bundled, load
from .simulate import (DelayedPolicy, FeedbackPolicy, ScaledPolicy, ShiftedPolicy, estimate_cost,
                       ensemble_summary, martingale_diagnostic, perturbation_test, simulate_particles)

EXIT_OK, EXIT_VERIFY, EXIT_SCHEMA, EXIT_SOLVER = 0, 1, 2, 3
COMMANDS = ("solve", "simulate", "verify", "liquidation", "resource", "figures")

CROSS_CHECK_TOL = 1e-6
STATIONARY_TOL = 1e-8
SWEEP_TOL = 1e-10
SWEEP_EPS = (0.1, 0.5, 1.0)


class Run:
    """Scenario plus command-line overrides and an output directory."""

    def __init__(self, scenario, args):
        self.scenario = scenario
        sim = scenario.simulation
        if args.seed is not None:
            sim = replace(sim, seed=args.seed)
        if args.particles is not None:
            sim = replace(sim, n_particles=args.particles)
        if args.dt is not None:
            sim = replace(sim, dt=args.dt)
        self.sim = sim
        self.allow_unverified = bool(args.allow_unverified or scenario.solver.get("allow_unverified", False))
        self.out = Path(args.out if args.out is not None else scenario.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.report = {"scenario": scenario.name, "scenario_hash": scenario.hash, "checks": []}

    @property
    def provenance(self):
        resolved = self.sim.resolve(self.scenario.problem)
        return {"scenario_hash": self.scenario.hash, "seed": resolved.seed,
                "n_particles": resolved.n_particles, "dt": fmt(resolved.dt)}

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows, self.provenance)

    def json(self, name, obj):
        write_json(self.out / name, {**obj, "provenance": self.provenance})

    def check(self, name, statistic, bound, ok):
        self.report["checks"].append({"name": name, "statistic": statistic, "bound": bound, "pass": bool(ok)})

    @property
    def failures(self):
        return [c["name"] for c in self.report["checks"] if not c["pass"]]

    def solve(self):
        solver = self.scenario.solver
        return solve(self.scenario.problem, allow_unverified=self.allow_unverified,
                     steps_per_unit=solver.get("steps_per_unit"),
                     adjoint_steps_per_unit=solver.get("adjoint_steps_per_unit"))


def _flat(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _labels(prefix, shape):
    return [prefix + "".join(f"_{i}" for i in idx) for idx in np.ndindex(*shape)]


def _write_solution(run, sol):
    prob = sol.problem
    outputs = run.scenario.outputs
    run.json("assumptions.json", sol.report.to_dict())
    if "value" in outputs:
        run.csv("value.csv", ["value", "R0"], [[sol.value, sol.adjoint.R0]])
    if "gains" in outputs:
        ric = sol.riccati
        header = ["t"] + _labels("K", (prob.d, prob.d)) + _labels("Lambda", (prob.d, prob.d))
        run.csv("riccati.csv", header, [[t] + _flat(k) + _flat(lam) for t, k, lam in zip(ric.grid, ric.K, ric.Lambda)])
        law = sol.law
        k = prob.factor_dim
        header = (["t"] + _labels("centered_gain", (prob.m, prob.d)) + _labels("mean_gain", (prob.m, prob.d))
                  + _labels("mean_offset", (prob.m,)) + _labels("factor_gain", (prob.m, k)))
        rows = [[law.times[j]] + _flat(law.centered_gain[j]) + _flat(law.mean_gain[j]) + _flat(law.mean_offset[j])
                + _flat(law.factor_gain[j]) for j in range(0, law.times.size, 2)]
        run.csv("gains.csv", header, rows)
    if "mean_path" in outputs:
        grid, path = mean_state_ode(prob, sol.law)
        run.csv("mean_path.csv", ["t"] + _labels("mean_x", (prob.d,)), [[t] + _flat(x) for t, x in zip(grid, path)])


def cmd_solve(run):
    sol = run.solve()
    _write_solution(run, sol)
    run.report.update(value=sol.value, route=sol.report.route, admissible=sol.report.overall_admissible)
    print(f"value = {fmt(sol.value)}")
    print(f"assumption route = {sol.report.route}")


def cmd_simulate(run):
    sol = run.solve()
    ens = simulate_particles(sol.problem, FeedbackPolicy(sol.problem, sol.law), run.sim)
    header, rows = ensemble_summary(ens)
    run.csv("ensemble.csv", header, rows)
    est = estimate_cost(ens)
    run.csv("cost.csv", ["cost_mean", "cost_se", "n", "tail_bound", "value"],
            [[est.mean, est.se, est.n, est.tail_bound, sol.value]])
    run.report.update(cost_mean=est.mean, cost_se=est.se, value=sol.value)
    print(f"simulated cost = {fmt(est.mean)} +/- {fmt(est.se)} (value {fmt(sol.value)})")


def cmd_verify(run):
    sol = run.solve()
    prob = sol.problem
    vs = run.scenario.verify
    base = FeedbackPolicy(prob, sol.law)
    perturbed_cfg = replace(run.sim, mean_mode="empirical")
    direction = vs.direction_fn(prob.m)
    policies = [("optimal", base, run.sim)]
    policies += [(f"scaled_{fmt(s)}", ScaledPolicy(base, s), perturbed_cfg) for s in vs.scales]
    policies += [("shifted_plus", ShiftedPolicy(base, direction, vs.eps), perturbed_cfg),
                 ("shifted_minus", ShiftedPolicy(base, direction, -vs.eps), perturbed_cfg),
                 (f"delayed_{fmt(vs.delay)}", DelayedPolicy(base, vs.delay), perturbed_cfg)]
    diag_rows = None
    names = []
    for name, policy, cfg in policies:
        d = martingale_diagnostic(prob, sol, policy, cfg, n_sigma=vs.n_sigma)
        names.append(name)
        if name == "optimal":
            worst = float(np.max(np.abs(d.drift_from_start) - vs.n_sigma * d.drift_se))
            run.check("optimal.flat", worst, 0.0, d.flat)
        else:
            worst = float(np.min(d.step_increments + vs.n_sigma * d.step_se))
            run.check(f"{name}.nondecreasing", worst, 0.0, d.nondecreasing)
        if diag_rows is None:
            diag_rows = [[t] for t in d.times]
        for row, m in zip(diag_rows, d.mean):
            row.append(float(m))
    pert = perturbation_test(prob, sol, direction, vs.eps, run.sim)
    run.check("perturbation.delta_nonnegative", pert.delta + vs.n_sigma * pert.delta_se, 0.0,
              pert.delta >= -vs.n_sigma * pert.delta_se)
    lo, hi = vs.ratio_bounds
    run.check("perturbation.quadratic_ratio", pert.ratio, [lo, hi], lo <= pert.ratio <= hi)
    if "diagnostics" in run.scenario.outputs:
        run.csv("diagnostics.csv", ["t"] + [f"mean_{n}" for n in names], diag_rows)
    run.report.update(value=sol.value, perturbation={"eps": pert.eps, "delta": pert.delta, "delta_se": pert.delta_se,
                                                     "delta_double": pert.delta_double, "ratio": pert.ratio})
    run.csv("verify.csv", ["check", "statistic", "pass"],
            [[c["name"], c["statistic"], c["pass"]] for c in run.report["checks"]])


def _require_kind(run, kind):
    if run.scenario.kind != kind:
        raise ScenarioError(f"the {kind} command needs a scenario of kind {kind!r}, got {run.scenario.kind!r}")


def cmd_liquidation(run):
    _require_kind(run, "liquidation")
    params = run.scenario.params
    sol = run.solve()
    prob = sol.problem
    grid, path = mean_state_ode(prob, sol.law)
    pick = np.unique(np.linspace(0, grid.size - 1, 21).round().astype(int))
    closed = np.array([apps.liq_mean_inventory(grid[i], params) for i in pick])
    generic = path[pick, 0]
    run.csv("liquidation.csv", ["t", "mean_inventory_closed_form", "mean_inventory_generic"],
            [[grid[i], c, g] for i, c, g in zip(pick, closed, generic)])
    q, p, nu = params.normalized
    ric = sol.riccati
    k_err = float(np.max(np.abs(ric.K[:, 0, 0] - [apps.liq_K(t, p, q, params.T) for t in ric.grid])))
    lam_err = float(np.max(np.abs(ric.Lambda[:, 0, 0] - [apps.liq_Lambda(t, p, q, nu, params.T) for t in ric.grid])))
    x0, s0 = params.x0, float(params.price.initial[0])
    a_closed = apps.liq_alpha0(params)
    a_generic = float(sol.law(0.0, np.array([[x0]]), np.array([x0]), np.array([[s0]]))[0, 0])
    mean_err = float(np.max(np.abs(closed - generic)))
    e_T = float(closed[-1])
    run.check("riccati_K_closed_form", k_err, CROSS_CHECK_TOL, k_err <= CROSS_CHECK_TOL)
    run.check("riccati_Lambda_closed_form", lam_err, CROSS_CHECK_TOL, lam_err <= CROSS_CHECK_TOL)
    run.check("mean_inventory_generic", mean_err, CROSS_CHECK_TOL, mean_err <= CROSS_CHECK_TOL)
    run.check("initial_control_generic", abs(a_closed - a_generic), CROSS_CHECK_TOL,
              abs(a_closed - a_generic) <= CROSS_CHECK_TOL)
    run.report.update(E_T=e_T, E_T_generic=float(generic[-1]), alpha0=a_closed, value=sol.value)
    print(f"E(T) = {e_T:.6f}")
    print(f"alpha_0 = {a_closed:.6f}")
    print(f"value = {sol.value:.6f}")


def _generic_stationary_mean(sol):
    """Fixed point of the mean-state ODE with coefficients frozen at the last tabulated time."""
    prob, law = sol.problem, sol.law
    t = float(law.times[-1])
    _, mg, mo, _, _ = law.gains_at(t)
    hat = hat_coefficients(prob, t)
    drift = hat.B - hat.C @ mg
    shift = prob.beta.mean(t, prob.factor) - hat.C @ mo
    return np.linalg.solve(drift, -shift)


def cmd_resource(run):
    _require_kind(run, "resource")
    params = run.scenario.params
    sol = run.solve()
    prob = sol.problem
    K, Lam = float(sol.riccati.K0[0, 0]), float(sol.riccati.Lambda0[0, 0])
    k_res = float(np.max(np.abs(riccati_rhs_K(prob, 0.0, sol.riccati.K0))))
    l_res = float(np.max(np.abs(riccati_rhs_Lambda(prob, 0.0, sol.riccati.K0, sol.riccati.Lambda0))))
    k_eta, lam_eps = apps.res_gains(params)
    xbar_closed = apps.res_stationary_reserve(params)
    xbar_generic = float(_generic_stationary_mean(sol)[0])
    sweep = [apps.res_stationary_reserve(apps.replace_params(params, eps=e)) for e in SWEEP_EPS]
    spread = float(max(sweep) - min(sweep))
    run.check("riccati_K_residual", k_res, STATIONARY_TOL, k_res <= STATIONARY_TOL)
    run.check("riccati_Lambda_residual", l_res, STATIONARY_TOL, l_res <= STATIONARY_TOL)
    run.check("K_closed_form", abs(K - apps.res_K(params)), STATIONARY_TOL, abs(K - apps.res_K(params)) <= STATIONARY_TOL)
    run.check("Lambda_closed_form", abs(Lam - apps.res_Lambda(params)), STATIONARY_TOL,
              abs(Lam - apps.res_Lambda(params)) <= STATIONARY_TOL)
    run.check("stationary_reserve_generic", abs(xbar_closed - xbar_generic), STATIONARY_TOL,
              abs(xbar_closed - xbar_generic) <= STATIONARY_TOL)
    run.check("stationary_reserve_eps_sweep", spread, SWEEP_TOL, spread <= SWEEP_TOL)
    grid, path = mean_state_ode(prob, sol.law)
    pick = np.unique(np.linspace(0, grid.size - 1, 21).round().astype(int))
    run.csv("resource.csv", ["t", "mean_reserve_closed_form", "mean_reserve_generic"],
            [[grid[i], apps.res_mean_reserve(grid[i], params), path[i, 0]] for i in pick])
    run.report.update(K=K, Lambda=Lam, K_eta=k_eta, Lambda_eps=lam_eps, stationary_reserve=xbar_closed,
                      stationary_reserve_generic=xbar_generic,
                      eps_sweep={fmt(e): v for e, v in zip(SWEEP_EPS, sweep)}, value=sol.value)
    print(f"stationary mean reserve = {xbar_closed:.10f} (generic {xbar_generic:.10f})")
    print(f"eps sweep spread = {spread:.3e}")


def cmd_figures(run):
    base = run.scenario.params if run.scenario.kind == "liquidation" else apps.LiquidationParams()
    ts, curves = apps.figure1_data(base=base)
    run.csv("figure1.csv", ["t"] + [f"nu={fmt(v)}" for v in apps.FIGURE1_NUS], [[t] + _flat(c) for t, c in zip(ts, curves)])
    ts, curves = apps.figure2_data(base=base)
    run.csv("figure2.csv", ["t"] + [f"q={fmt(v)}" for v in apps.FIGURE2_QS], [[t] + _flat(c) for t, c in zip(ts, curves)])
    print("wrote figure1.csv and figure2.csv")


HANDLERS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify,
            "liquidation": cmd_liquidation, "resource": cmd_resource, "figures": cmd_figures}


def build_parser():
    parser = argparse.ArgumentParser(prog="lqmkv", description="Solve and verify linear-quadratic McKean-Vlasov control problems.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("scenario", help="scenario JSON file, or the name of a bundled scenario")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--particles", type=int)
    parser.add_argument("--dt", type=float)
    parser.add_argument("--out", help="output directory (default: the scenario's output_dir)")
    parser.add_argument("--opt-in-remark-4-2", "--allow-unverified", dest="allow_unverified", action="store_true",
                        help="solve even when no assumption set can be confirmed up front")
    return parser


def _scenario_path(arg):
    path = Path(arg)
    if not path.exists() and bundled(arg).exists():
        return bundled(arg)
    return path


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scenario = load(_scenario_path(args.scenario))
        run = Run(scenario, args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        HANDLERS[args.command](run)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except LqmkvError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    run.report["command"] = args.command
    run.json(f"{args.command}_report.json", run.report)
    failed = run.failures
    for c in run.report["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {fmt(c['statistic'])}")
    if failed:
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
