"""Optimal feedback law, optimal value and the optimally controlled mean state.

The optimal control splits into a centered feedback, a mean feedback and a
factor term:

    alpha = -S^-1 U (x - xbar) - S_hat^-1 (V xbar + O) - S^-1 Xi (f - m(t)),

where ``O`` is the mean forcing and ``Xi`` maps the centered factor to the
centered part of the control forcing.
"""

from dataclasses import dataclass

import numpy as np

from ._numerics import check_uniform, half_grid, rk4_forward
from .bsde import _bsolve, _nsum, adjoint_grid, bsde_coefficients, solve_adjoint
from .errors import AssumptionError
from .model import CoefficientSamples, validate_finite_horizon, validate_infinite_horizon
from .riccati import solve_riccati


@dataclass(frozen=True)
class FeedbackLaw:
    """Feedback coefficients tabulated on ``times``; linear in between."""

    mode: str
    times: np.ndarray
    S: np.ndarray
    Shat: np.ndarray
    U: np.ndarray
    V: np.ndarray
    O: np.ndarray
    Xi: np.ndarray
    factor_mean: np.ndarray
    centered_gain: np.ndarray  # S^-1 U
    mean_gain: np.ndarray  # S_hat^-1 V
    mean_offset: np.ndarray  # S_hat^-1 O
    factor_gain: np.ndarray  # S^-1 Xi
    G: np.ndarray
    Ghat: np.ndarray

    def _interp(self, arr, t):
        times = self.times
        if t <= times[0]:
            return arr[0]
        if t >= times[-1]:
            return arr[-1]
        i = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[i]) / (times[i + 1] - times[i])
        if w == 0.0:
            return arr[i]
        return (1.0 - w) * arr[i] + w * arr[i + 1]

    def gains_at(self, t):
        """``(centered_gain, mean_gain, mean_offset, factor_gain, factor_mean)`` at ``t``."""
        return tuple(self._interp(a, t) for a in
                     (self.centered_gain, self.mean_gain, self.mean_offset, self.factor_gain, self.factor_mean))

    def mean_control(self, t, xbar):
        _, mg, mo, _, _ = self.gains_at(t)
        return -(mg @ xbar + mo)

    def __call__(self, t, x, xbar, f=None):
        return optimal_control(self, t, x, xbar, f)


def feedback_coefficients(problem, riccati, adjoint, grid=None):
    """Tabulate the optimal feedback on the nodes and midpoints of ``grid``.

    The default grid is the adjoint grid (cut to its usable part on the
    infinite horizon), so that RK4 in :func:`mean_state_ode` on every other
    node sees exact coefficients.
    """
    if grid is None:
        grid = adjoint.grid
        if not problem.is_finite:
            grid = grid[grid <= adjoint.usable_horizon + 1e-12]
    grid, _ = check_uniform(grid)
    times = half_grid(grid)
    s = CoefficientSamples(problem, times)
    K = np.array(riccati.K_at(times))
    Lam = np.array(riccati.Lambda_at(times))
    Yb = np.array(adjoint.mean_Y_at(times))
    Gm = np.array(adjoint.Gamma_at(times))
    fac = problem.factor
    k = problem.factor_dim
    ch = problem.channels

    S = s.N + _nsum(s.F, K, s.F)
    U = s.I + _nsum(s.F, K, s.D) + np.swapaxes(s.C, 1, 2) @ K
    Sh = s.Nh + _nsum(s.Fh, K, s.Fh)
    V = s.Ih + _nsum(s.Fh, K, s.Dh) + np.swapaxes(s.Ch, 1, 2) @ Lam
    gam_m, H_m = ch["gamma"].sample_mean(times, fac), ch["H"].sample_mean(times, fac)
    O = H_m + np.einsum("tiba,tbc,tic->ta", s.Fh, K, gam_m) + np.einsum("tba,tb->ta", s.Ch, Yb)
    if k:
        bg, bH = ch["gamma"].sample_loading(times, k), ch["H"].sample_loading(times, k)
        Xi = bH + np.einsum("tiba,tbc,tick->tak", s.F, K, bg) + np.swapaxes(s.C, 1, 2) @ Gm
        fmean = np.asarray(fac.mean(times), dtype=float).reshape(times.size, k)
    else:
        Xi = np.zeros((times.size, problem.m, 0))
        fmean = np.zeros((times.size, 0))
    cg = _bsolve(S, U, "S", times)
    mg = _bsolve(Sh, V, "S_hat", times)
    mo = _bsolve(Sh, O[..., None], "S_hat", times)[..., 0]
    fg = _bsolve(S, Xi, "S", times) if k else Xi.copy()
    eye = np.eye(problem.d)
    G = problem.rho * eye - s.B[0] + s.C[0] @ cg[0]
    Gh = problem.rho * eye - s.Bh[0] + s.Ch[0] @ mg[0]
    return FeedbackLaw("finite" if problem.is_finite else "infinite", times, S, Sh, U, V, O, Xi, fmean,
                       cg, mg, mo, fg, G, Gh)


def optimal_control(law, t, x, xbar, f=None):
    """Optimal control for particles ``x`` (n, d) given the mean ``xbar``.

    ``f`` holds factor values (n, k); it may be omitted without a factor.
    """
    cg, mg, mo, fg, fm = law.gains_at(t)
    x = np.asarray(x, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    out = -(x - xbar) @ cg.T - (mg @ xbar + mo)
    if fg.shape[-1] and f is not None:
        out = out - (np.asarray(f, dtype=float) - fm) @ fg.T
    return out


def value(problem, riccati, adjoint, cov_y0_x0=None):
    """Optimal cost from the solved value representation at time 0.

    ``cov_y0_x0`` is the trace of Cov(Y_0, X_0); it vanishes for the
    built-in factors, whose initial value is deterministic.
    """
    K0, L0 = riccati.K0, riccati.Lambda0
    xbar0 = problem.x0_mean
    y0 = adjoint.mean_Y[0]
    cross = float(y0 @ xbar0) + (0.0 if cov_y0_x0 is None else float(cov_y0_x0))
    return float(np.trace(K0 @ problem.x0_cov) + xbar0 @ L0 @ xbar0 + 2.0 * cross + adjoint.R[0])


def mean_state_ode(problem, law, grid=None, xbar0=None):
    """Integrate the mean of the optimally controlled state with RK4.

    The default grid takes every other tabulation time of ``law`` so that
    the RK4 midpoints land on tabulated values.

    Returns:
        ``(grid, path)`` with ``path`` of shape (len(grid), d).
    """
    if grid is None:
        grid = law.times[::2]
    grid, h = check_uniform(grid)
    times = half_grid(grid)
    s = CoefficientSamples(problem, times)
    beta_m = problem.beta.sample_mean(times, problem.factor)
    drift = np.empty((times.size, problem.d, problem.d))
    shift = np.empty((times.size, problem.d))
    for j, t in enumerate(times):
        _, mg, mo, _, _ = law.gains_at(t)
        drift[j] = s.Bh[j] - s.Ch[j] @ mg
        shift[j] = beta_m[j] - s.Ch[j] @ mo
    x0 = problem.x0_mean if xbar0 is None else np.asarray(xbar0, dtype=float)
    path = rk4_forward(lambda j, y: drift[j] @ y + shift[j], x0, h, grid.size - 1)
    return grid, path


@dataclass(frozen=True)
class Solution:
    """Everything produced by :func:`solve`."""

    problem: object
    report: object
    riccati: object
    adjoint: object
    law: object
    value: float


def solve(problem, allow_unverified=False, steps_per_unit=None, adjoint_steps_per_unit=None):
    """Check assumptions, then solve Riccati, adjoint and feedback.

    Args:
        problem: the control problem.
        allow_unverified: proceed when no assumption route passes up front;
            positivity of the gain matrices is then checked along the solve.
        steps_per_unit: Riccati steps per unit time on a finite horizon.
        adjoint_steps_per_unit: adjoint grid density on the infinite horizon.

    Raises:
        AssumptionError: assumptions fail and ``allow_unverified`` is false.
    """
    if problem.is_finite:
        report = validate_finite_horizon(problem)
        if not report.overall_admissible and not allow_unverified:
            raise AssumptionError("standing assumptions fail; opt in to solve anyway")
        ric = solve_riccati(problem, steps_per_unit=steps_per_unit or 2000)
        adj = solve_adjoint(problem, ric)
    else:
        pre = validate_infinite_horizon(problem)
        if not (pre.solve_anyway or pre.verdicts["H2.positive"].ok) and not allow_unverified:
            raise AssumptionError("standing assumptions fail; opt in to solve anyway")
        ric = solve_riccati(problem)
        grid = adjoint_grid(problem, adjoint_steps_per_unit)
        adj = solve_adjoint(problem, ric, coeffs=bsde_coefficients(problem, ric, grid))
    law = feedback_coefficients(problem, ric, adj)
    if not problem.is_finite:
        report = validate_infinite_horizon(problem, law)
        if not report.overall_admissible and not allow_unverified:
            raise AssumptionError("closed-loop assumptions fail; opt in to solve anyway")
    return Solution(problem, report, ric, adj, law, value(problem, ric, adj))

