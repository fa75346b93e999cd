"""Linear mean-field adjoint equation and the value offset ``R``.

The adjoint ``Y`` solves a linear mean-field BSDE.  For random coefficients
that are affine in a factor with independent noise, the solution splits as

    Y_t = Ybar(t) + Gamma(t) (F_t - m(t)),

where ``m`` is the factor mean.  ``Ybar`` and the loading ``Gamma`` solve
linear backward ODEs, and the martingale part loads only on the factor
noise.  Both ODEs are integrated with the same RK4 grid as the Riccati step.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._numerics import HermitePath, check_uniform, half_grid, rk4_backward, uniform_grid
from .errors import DegenerateGainError, InadmissibleAdjointError, TruncationError, UnsupportedCouplingError
from .model import CoefficientSamples

INFINITE_STEPS_PER_UNIT = 100
TAIL_TOL = 1e-8


def truncation_horizon(rho):
    return max(50.0, 20.0 / rho)


def _bsolve(S, rhs, what, times):
    """Batched SPD solve along a leading time axis."""
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise DegenerateGainError(f"{what} is not positive definite", None) from None
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    scale = np.maximum(1.0, np.max(np.abs(S), axis=(-2, -1)))
    bad = np.min(diag, axis=-1) ** 2 <= 1e-12 * scale
    if bad.any():
        raise DegenerateGainError(f"{what} is numerically singular", float(times[np.argmax(bad)]))
    return np.linalg.solve(S, rhs)


def _nsum(A, K, B):
    # sum_i A_i' K B_i with a leading time axis: A (L,n,a,b), K (L,b,b), B (L,n,b,c)
    if A.shape[1] == 0:
        return np.zeros(A.shape[:1] + (A.shape[3], B.shape[3]))
    return np.einsum("tiba,tbc,tice->tae", A, K, B)


@dataclass(frozen=True)
class BsdeCoefficients:
    """Adjoint drift data sampled on the half grid of ``grid``.

    ``G`` and ``G_hat`` act on the centered and mean parts of ``Y``;
    ``theta_mean`` is the mean forcing and ``theta_loading`` its factor
    loading.  The ``S``/``U``/``V`` gain pieces are kept for the control.
    """

    mode: str
    grid: np.ndarray
    times: np.ndarray
    G: np.ndarray
    G_hat: np.ndarray
    J: np.ndarray
    J_hat: np.ndarray
    theta_mean: np.ndarray
    theta_loading: np.ndarray
    factor_drift: np.ndarray
    S: np.ndarray
    S_hat: np.ndarray
    U: np.ndarray
    V: np.ndarray
    K: np.ndarray
    Lambda: np.ndarray
    terminal_mean: np.ndarray | None
    terminal_loading: np.ndarray | None


def adjoint_grid(problem, steps_per_unit=None, horizon=None):
    """Grid for the adjoint: the Riccati default on a finite horizon, or a
    grid reaching twice the simulation truncation on the infinite one."""
    if problem.is_finite:
        return uniform_grid(0.0, problem.horizon, steps_per_unit or 2000)
    far = 2.0 * (horizon or truncation_horizon(problem.rho))
    return uniform_grid(0.0, far, steps_per_unit or INFINITE_STEPS_PER_UNIT)


def bsde_coefficients(problem, riccati, grid):
    """Sample the adjoint drift coefficients on the half grid of ``grid``."""
    grid, _ = check_uniform(grid)
    times = half_grid(grid)
    s = CoefficientSamples(problem, times)
    K = np.array(riccati.K_at(times))
    Lam = np.array(riccati.Lambda_at(times))
    L, d = times.size, problem.d
    k = problem.factor_dim

    S = s.N + _nsum(s.F, K, s.F)
    U = s.I + _nsum(s.F, K, s.D) + np.swapaxes(s.C, 1, 2) @ K
    Sh = s.Nh + _nsum(s.Fh, K, s.Fh)
    V = s.Ih + _nsum(s.Fh, K, s.Dh) + np.swapaxes(s.Ch, 1, 2) @ Lam
    SiU = _bsolve(S, U, "S", times)
    ShiV = _bsolve(Sh, V, "S_hat", times)
    eye = np.eye(d)
    G = problem.rho * eye - s.B + s.C @ SiU
    Gh = problem.rho * eye - s.Bh + s.Ch @ ShiV
    J = -s.D + s.F @ SiU[:, None]
    Jh = -s.Dh + s.Fh @ ShiV[:, None]

    fac = problem.factor
    ch = problem.channels
    beta_m, gam_m = ch["beta"].sample_mean(times, fac), ch["gamma"].sample_mean(times, fac)
    M_m, H_m = ch["M"].sample_mean(times, fac), ch["H"].sample_mean(times, fac)
    FhKg = np.einsum("tiba,tbc,tic->ta", s.Fh, K, gam_m)
    DhKg = np.einsum("tiba,tbc,tic->ta", s.Dh, K, gam_m)
    theta_mean = (-M_m - np.einsum("tab,tb->ta", Lam, beta_m) - DhKg
                  + np.einsum("tba,tb->ta", V, _bsolve(Sh, (H_m + FhKg)[..., None], "S_hat", times)[..., 0]))

    if k:
        bb, bg = ch["beta"].sample_loading(times, k), ch["gamma"].sample_loading(times, k)
        bM, bH = ch["M"].sample_loading(times, k), ch["H"].sample_loading(times, k)
        FKbg = np.einsum("tiba,tbc,tick->tak", s.F, K, bg)
        DKbg = np.einsum("tiba,tbc,tick->tak", s.D, K, bg)
        theta_loading = (-bM - K @ bb - DKbg
                         + np.swapaxes(U, 1, 2) @ _bsolve(S, bH + FKbg, "S", times))
        A_F = np.atleast_2d(fac.centered_drift).astype(float)
    else:
        theta_loading = np.zeros((L, d, 0))
        A_F = np.zeros((0, 0))

    T_mean = T_load = None
    if problem.is_finite:
        T = problem.horizon
        T_mean = problem.L.sample_mean([T], fac)[0]
        T_load = problem.L.sample_loading([T], k)[0]
    return BsdeCoefficients("finite" if problem.is_finite else "infinite", grid, times, G, Gh, J, Jh,
                            theta_mean, theta_loading, A_F, S, Sh, U, V, K, Lam, T_mean, T_load)


def _is_constant(a):
    return a.shape[0] == 0 or bool(np.all(a == a[:1]))


def _check_integrable(coeffs, rho, G, forcing, what):
    if not np.any(forcing != 0):
        return
    margin = float(np.min(np.real(np.linalg.eigvals(G[0])))) - rho
    if margin <= 0:
        raise InadmissibleAdjointError(
            f"{what}: adjoint drift does not exceed the discount rate (margin {margin:.3g})")


def solve_Y_deterministic(coeffs, rho=0.0):
    """Mean adjoint ``Ybar`` from ``Ybar' = theta_mean + G_hat' Ybar``.

    Returns node values and derivatives on ``coeffs.grid``.
    """
    grid = coeffs.grid
    h = grid[1] - grid[0]
    GhT = np.swapaxes(coeffs.G_hat, 1, 2)
    th = coeffs.theta_mean
    if coeffs.mode == "finite":
        terminal = coeffs.terminal_mean
    else:
        _check_integrable(coeffs, rho, coeffs.G_hat, th, "mean adjoint")
        terminal = -np.linalg.solve(GhT[-1], th[-1])
        if _is_constant(th) and _is_constant(GhT):
            vals = np.broadcast_to(terminal, (grid.size,) + terminal.shape).copy()
            return vals, np.zeros_like(vals)
    return rk4_backward(lambda j, y: th[j] + GhT[j] @ y, terminal, h, grid.size - 1)


def solve_Y_factor(coeffs, factor, rho=0.0):
    """Factor loading ``Gamma`` of the centered adjoint.

    Solves ``Gamma' = A + G' Gamma - Gamma a`` with ``A`` the loading of the
    forcing and ``a`` the centered factor drift.
    """
    grid = coeffs.grid
    h = grid[1] - grid[0]
    A = coeffs.theta_loading
    d, k = A.shape[1], A.shape[2]
    if factor is not None and factor.shared_noise is not None and (
            np.any(A != 0) or (coeffs.terminal_loading is not None and np.any(coeffs.terminal_loading != 0))):
        raise UnsupportedCouplingError("factor shares a state noise while loading the adjoint")
    if k == 0:
        z = np.zeros((grid.size, d, 0))
        return z, z.copy()
    GT = np.swapaxes(coeffs.G, 1, 2)
    aF = coeffs.factor_drift
    if coeffs.mode == "finite":
        terminal = coeffs.terminal_loading
    else:
        _check_integrable(coeffs, rho, coeffs.G, A, "factor adjoint")
        terminal = scipy.linalg.solve_sylvester(GT[-1], -aF, -A[-1])
        if _is_constant(A) and _is_constant(GT):
            vals = np.broadcast_to(terminal, (grid.size,) + terminal.shape).copy()
            return vals, np.zeros_like(vals)
    return rk4_backward(lambda j, y: A[j] + GT[j] @ y - y @ aF, terminal, h, grid.size - 1)


@dataclass(frozen=True)
class AdjointSolution:
    """Adjoint pieces on ``grid`` plus the value offset ``R``.

    On the infinite horizon the values near the far end of the grid are
    affected by the truncation; use them only up to ``usable_horizon``.
    """

    mode: str
    grid: np.ndarray
    mean_Y: np.ndarray
    mean_Y_dot: np.ndarray
    Gamma: np.ndarray
    Gamma_dot: np.ndarray
    R: np.ndarray
    h: np.ndarray
    tail_bound: float
    usable_horizon: float
    factor: object = None

    def __post_init__(self):
        object.__setattr__(self, "_Y", HermitePath(self.grid, self.mean_Y, self.mean_Y_dot))
        object.__setattr__(self, "_G", HermitePath(self.grid, self.Gamma, self.Gamma_dot))

    def mean_Y_at(self, t):
        return self._Y(t)

    def Gamma_at(self, t):
        return self._G(t)

    def R_at(self, t):
        return np.interp(t, self.grid, self.R)

    def Y(self, t, f=None):
        """Adjoint at time ``t`` for factor values ``f`` of shape (n, k)."""
        ybar = self.mean_Y_at(t)
        if f is None or self.Gamma.shape[-1] == 0:
            return ybar
        fc = np.asarray(f, dtype=float) - np.atleast_1d(self.factor.mean(t))
        return ybar + fc @ self.Gamma_at(t).T

    def Z_factor(self, t, f):
        """Martingale integrand on the factor noise; the state-noise part is zero."""
        f = np.asarray(f, dtype=float)
        return self.Gamma_at(t) @ self.factor.diffusion(t, f).reshape(-1, 1)

    @property
    def R0(self):
        return float(self.R[0])


def h_path(problem, coeffs, mean_Y, Gamma):
    """Expected value-offset generator on ``coeffs.times``.

    ``mean_Y`` and ``Gamma`` are given at the same times.  Factor second
    moments enter through the closed-form factor covariance.
    """
    times = coeffs.times
    fac = problem.factor
    ch = problem.channels
    K = coeffs.K
    s = CoefficientSamples(problem, times)
    beta_m, gam_m, H_m = (ch[n].sample_mean(times, fac) for n in ("beta", "gamma", "H"))
    out = np.einsum("tia,tab,tib->t", gam_m, K, gam_m) + 2 * np.einsum("ta,ta->t", beta_m, mean_Y)
    O = H_m + np.einsum("tiba,tbc,tic->ta", s.Fh, K, gam_m) + np.einsum("tba,tb->ta", s.Ch, mean_Y)
    out -= np.einsum("ta,ta->t", O, _bsolve(coeffs.S_hat, O[..., None], "S_hat", times)[..., 0])
    k = problem.factor_dim
    if k:
        cov = np.stack([fac.covariance(t) for t in times])
        bb, bg, bH = (ch[n].sample_loading(times, k) for n in ("beta", "gamma", "H"))
        out += np.einsum("tiak,tab,tibl,tkl->t", bg, K, bg, cov)
        out += 2 * np.einsum("tak,tal,tkl->t", bb, Gamma, cov)
        Xi = bH + np.einsum("tiba,tbc,tick->tak", s.F, K, bg) + np.swapaxes(s.C, 1, 2) @ Gamma
        SiXi = _bsolve(coeffs.S, Xi, "S", times)
        out -= np.einsum("tak,tal,tkl->t", Xi, SiXi, cov)
    return out


def solve_R(rho, h_half, grid, mode):
    """Discounted integral of ``h`` from ``t`` to the (truncated) horizon.

    Returns ``(R, tail_bound)``; ``R' = rho R - h`` is integrated backward
    from zero at the end of ``grid``.
    """
    step = grid[1] - grid[0]
    R, _ = rk4_backward(lambda j, r: rho * r - h_half[j], 0.0, step, grid.size - 1)
    tail = 0.0
    if mode == "infinite":
        tail = float(np.exp(-rho * grid[-1]) * np.max(np.abs(h_half)) / rho)
        if tail > TAIL_TOL * max(1.0, float(np.max(np.abs(h_half))) / rho):
            raise TruncationError(f"tail bound {tail:.3g} too large; extend the truncation horizon")
    return R, tail


def solve_adjoint(problem, riccati, grid=None, coeffs=None):
    """Solve for the mean adjoint, its factor loading and ``R``."""
    if coeffs is None:
        if grid is None:
            grid = riccati.grid if problem.is_finite else adjoint_grid(problem)
        coeffs = bsde_coefficients(problem, riccati, grid)
    grid = coeffs.grid
    Yb, Ybd = solve_Y_deterministic(coeffs, problem.rho)
    Gm, Gmd = solve_Y_factor(coeffs, problem.factor, problem.rho)
    times = coeffs.times
    Y_half = np.empty((times.size,) + Yb.shape[1:])
    G_half = np.empty((times.size,) + Gm.shape[1:])
    Y_half[0::2], G_half[0::2] = Yb, Gm
    Y_half[1::2] = HermitePath(grid, Yb, Ybd)(times[1::2])
    G_half[1::2] = HermitePath(grid, Gm, Gmd)(times[1::2]) if Gm.shape[-1] else 0.0
    h_half = h_path(problem, coeffs, Y_half, G_half)
    R, tail = solve_R(problem.rho, h_half, grid, coeffs.mode)
    usable = grid[-1] if problem.is_finite else grid[-1] / 2
    return AdjointSolution(coeffs.mode, grid, Yb, Ybd, Gm, Gmd, R, h_half[0::2], tail, usable, problem.factor)
