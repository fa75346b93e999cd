"""Riccati equations for the centered and mean quadratic value coefficients.

``K`` weights the centered state and ``Lambda`` the mean state.  On a finite
horizon both are integrated backward with fixed-step RK4.  On the infinite
horizon they are the long-horizon limits of the same backward flow started
from zero terminal data.
"""

from dataclasses import dataclass

import numpy as np

from ._numerics import (HermitePath, check_uniform, half_grid, rk4_backward, spd_solve, sym,
                        uniform_grid)
from .errors import DegenerateGainError, DomainError, HorizonLimitDivergenceError, RiccatiBlowUpError
from .model import CoefficientSamples

STEPS_PER_UNIT = 2000
INFINITE_STEPS_PER_UNIT = 100
RESIDUAL_TOL = 1e-8


def _noise_sum(A, K, B):
    """sum_i A_i' K B_i over the noise axis."""
    if A.shape[0] == 0:
        return np.zeros((A.shape[2], B.shape[2]))
    return (np.swapaxes(A, 1, 2) @ K @ B).sum(axis=0)


def centered_gains(K, C, D, F, N, I):
    """Return ``(S, U)`` with S = N + sum F'KF and U = I + sum F'KD + C'K."""
    S = N + _noise_sum(F, K, F)
    U = I + _noise_sum(F, K, D) + C.T @ K
    return S, U


def mean_gains(K, Lam, Ch, Dh, Fh, Nh, Ih):
    """Return ``(S_hat, V)`` with S_hat = N_hat + sum F_hat'KF_hat and V = I_hat + sum F_hat'KD_hat + C_hat'Lambda."""
    Sh = Nh + _noise_sum(Fh, K, Fh)
    V = Ih + _noise_sum(Fh, K, Dh) + Ch.T @ Lam
    return Sh, V


def _phi0(K, rho, B, C, D, F, Q, N, I, t=None):
    S, U = centered_gains(K, C, D, F, N, I)
    KB = K @ B
    out = -rho * K + KB + KB.T + _noise_sum(D, K, D) + Q - U.T @ spd_solve(S, U, "S", t)
    return sym(out)


def _psi0(K, Lam, rho, Bh, Ch, Dh, Fh, Qh, Nh, Ih, t=None):
    Sh, V = mean_gains(K, Lam, Ch, Dh, Fh, Nh, Ih)
    LB = Lam @ Bh
    out = -rho * Lam + LB + LB.T + _noise_sum(Dh, K, Dh) + Qh - V.T @ spd_solve(Sh, V, "S_hat", t)
    return sym(out)


def riccati_rhs_K(problem, t, K):
    """Centered Riccati map at time ``t``; on a finite horizon dK/dt = -value."""
    s = CoefficientSamples(problem, [t])
    return _phi0(np.asarray(K, dtype=float), problem.rho, s.B[0], s.C[0], s.D[0], s.F[0], s.Q[0], s.N[0],
                 s.I[0], t)


def riccati_rhs_Lambda(problem, t, K, Lam):
    """Mean Riccati map at time ``t``; on a finite horizon dLambda/dt = -value."""
    s = CoefficientSamples(problem, [t])
    return _psi0(np.asarray(K, dtype=float), np.asarray(Lam, dtype=float), problem.rho, s.Bh[0], s.Ch[0],
                 s.Dh[0], s.Fh[0], s.Qh[0], s.Nh[0], s.Ih[0], t)


def _k_rhs(problem, s, times):
    rho = problem.rho

    def rhs(j, K):
        return -_phi0(K, rho, s.B[j], s.C[j], s.D[j], s.F[j], s.Q[j], s.N[j], s.I[j], times[j])
    return rhs


def _lambda_rhs(problem, s, times, K_half):
    rho = problem.rho

    def rhs(j, Lam):
        return -_psi0(K_half[j], Lam, rho, s.Bh[j], s.Ch[j], s.Dh[j], s.Fh[j], s.Qh[j], s.Nh[j], s.Ih[j],
                      times[j])
    return rhs


def _run_backward(rhs, terminal, h, n, what):
    try:
        vals, ders = rk4_backward(rhs, terminal, h, n, post=sym)
    except DegenerateGainError as exc:
        raise RiccatiBlowUpError(f"{what}: {exc}", exc.time) from exc
    bad = ~np.all(np.isfinite(vals.reshape(vals.shape[0], -1)), axis=1)
    if bad.any():
        raise RiccatiBlowUpError(f"{what} became non-finite", None)
    return vals, ders


def default_grid(problem, steps_per_unit=STEPS_PER_UNIT):
    if not problem.is_finite:
        raise DomainError("default grid needs a finite horizon")
    return uniform_grid(0.0, problem.horizon, steps_per_unit)


def solve_K_finite(problem, grid=None, check_convergence=False):
    """Integrate the centered Riccati equation backward from ``K(T) = P``.

    Args:
        problem: finite-horizon problem.
        grid: uniform grid on ``[0, T]``; defaults to 2000 steps per unit time.
        check_convergence: also solve on the doubled grid and compare the
            two runs; raises RiccatiBlowUpError if they disagree by more
            than 1e-6.

    Returns:
        ``(grid, K, K_dot)`` with node values and derivatives.
    """
    if not problem.is_finite:
        raise DomainError("finite-horizon solver needs a finite horizon")
    grid = default_grid(problem) if grid is None else np.asarray(grid, dtype=float)
    grid, h = check_uniform(grid)
    times = half_grid(grid)
    s = CoefficientSamples(problem, times)
    K, Kd = _run_backward(_k_rhs(problem, s, times), problem.P, h, grid.size - 1, "K")
    if check_convergence:
        fine = np.linspace(grid[0], grid[-1], 2 * grid.size - 1)
        _, K2, _ = solve_K_finite(problem, fine)
        gap = float(np.max(np.abs(K2[::2] - K)))
        if gap > 1e-6:
            raise RiccatiBlowUpError(f"K not converged under step halving (gap {gap:.3g})")
    return grid, K, Kd


def solve_Lambda_finite(problem, K, grid, K_dot=None):
    """Integrate the mean Riccati equation backward from ``Lambda(T) = P + Pt``.

    ``K`` holds the centered solution at the nodes of ``grid``; values at the
    RK4 midpoints come from its cubic Hermite interpolant.
    """
    grid, h = check_uniform(grid)
    K = np.asarray(K, dtype=float)
    if K_dot is None:
        K_dot = np.stack([-riccati_rhs_K(problem, t, k) for t, k in zip(grid, K)])
    times = half_grid(grid)
    K_half = np.empty((times.size,) + K.shape[1:])
    K_half[0::2] = K
    K_half[1::2] = HermitePath(grid, K, K_dot)(times[1::2])
    s = CoefficientSamples(problem, times)
    return _run_backward(_lambda_rhs(problem, s, times, K_half), problem.P + problem.Pt, h, grid.size - 1,
                         "Lambda")


def _horizon_limit(step_fn, start, T_step, tol, T_max, steps_per_unit, what):
    n_chunk = max(1, int(round(T_step * steps_per_unit)))
    h = T_step / n_chunk
    y = start
    elapsed = 0.0
    while elapsed < T_max:
        y_new, _ = _run_backward(step_fn, y, h, n_chunk, what)
        y_new = y_new[0]
        elapsed += T_step
        if np.max(np.abs(y_new - y)) < tol:
            return y_new, elapsed
        y = y_new
    raise HorizonLimitDivergenceError(f"{what} did not settle within horizon {T_max}")


@dataclass(frozen=True)
class HorizonLimit:
    value: np.ndarray
    horizon_used: float
    residual: float


def solve_K_infinite(problem, T_step=5.0, tol=1e-10, T_max=500.0, steps_per_unit=INFINITE_STEPS_PER_UNIT):
    """Stationary centered Riccati solution as a long-horizon limit.

    The backward flow is autonomous, so it is continued in chunks of length
    ``T_step`` until successive values differ by less than ``tol``.  The RK4
    map shares its fixed points with the flow, so a coarse step loses no
    accuracy in the limit.
    """
    s = CoefficientSamples(problem, np.zeros(1))
    zero = np.zeros((problem.d, problem.d))
    rho = problem.rho

    def rhs(j, K):
        return -_phi0(K, rho, s.B[0], s.C[0], s.D[0], s.F[0], s.Q[0], s.N[0], s.I[0])

    K, used = _horizon_limit(rhs, zero, T_step, tol, T_max, steps_per_unit, "K")
    res = float(np.max(np.abs(rhs(0, K))))
    if res > RESIDUAL_TOL:
        raise HorizonLimitDivergenceError(f"stationary K residual {res:.3g} above {RESIDUAL_TOL}")
    return HorizonLimit(K, used, res)


def solve_Lambda_infinite(problem, K, T_step=5.0, tol=1e-10, T_max=500.0,
                          steps_per_unit=INFINITE_STEPS_PER_UNIT):
    """Stationary mean Riccati solution for a given stationary ``K``."""
    s = CoefficientSamples(problem, np.zeros(1))
    zero = np.zeros((problem.d, problem.d))
    rho = problem.rho
    K = np.asarray(K, dtype=float)

    def rhs(j, Lam):
        return -_psi0(K, Lam, rho, s.Bh[0], s.Ch[0], s.Dh[0], s.Fh[0], s.Qh[0], s.Nh[0], s.Ih[0])

    Lam, used = _horizon_limit(rhs, zero, T_step, tol, T_max, steps_per_unit, "Lambda")
    res = float(np.max(np.abs(rhs(0, Lam))))
    if res > RESIDUAL_TOL:
        raise HorizonLimitDivergenceError(f"stationary Lambda residual {res:.3g} above {RESIDUAL_TOL}")
    return HorizonLimit(Lam, used, res)


@dataclass(frozen=True)
class RiccatiSolution:
    """Solved ``K`` and ``Lambda``.

    On a finite horizon the arrays are node values on ``grid``; on the
    infinite horizon ``grid`` is None and the arrays are constant matrices.
    """

    mode: str
    grid: np.ndarray | None
    K: np.ndarray
    Lambda: np.ndarray
    K_dot: np.ndarray | None = None
    Lambda_dot: np.ndarray | None = None
    residuals: tuple = ()

    def __post_init__(self):
        if self.mode == "finite":
            object.__setattr__(self, "_K_path", HermitePath(self.grid, self.K, self.K_dot))
            object.__setattr__(self, "_L_path", HermitePath(self.grid, self.Lambda, self.Lambda_dot))

    def K_at(self, t):
        if self.mode == "infinite":
            t = np.asarray(t, dtype=float)
            return np.broadcast_to(self.K, t.shape + self.K.shape)
        return self._K_path(t)

    def Lambda_at(self, t):
        if self.mode == "infinite":
            t = np.asarray(t, dtype=float)
            return np.broadcast_to(self.Lambda, t.shape + self.Lambda.shape)
        return self._L_path(t)

    @property
    def K0(self):
        return self.K if self.mode == "infinite" else self.K[0]

    @property
    def Lambda0(self):
        return self.Lambda if self.mode == "infinite" else self.Lambda[0]


def solve_riccati(problem, grid=None, steps_per_unit=STEPS_PER_UNIT, check_convergence=False, **limit_opts):
    """Solve both Riccati equations in the mode implied by the horizon."""
    if problem.is_finite:
        if grid is None:
            grid = default_grid(problem, steps_per_unit)
        grid, K, Kd = solve_K_finite(problem, grid, check_convergence)
        Lam, Ld = solve_Lambda_finite(problem, K, grid, Kd)
        return RiccatiSolution("finite", grid, K, Lam, Kd, Ld)
    k = solve_K_infinite(problem, **limit_opts)
    lam = solve_Lambda_infinite(problem, k.value, **limit_opts)
    return RiccatiSolution("infinite", None, k.value, lam.value, residuals=(k.residual, lam.residual))
