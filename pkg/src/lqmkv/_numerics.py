"""Small numerical kernels: fixed-step RK4, Hermite paths, adaptive Simpson."""

import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import DegenerateGainError

PIVOT_TOL = 1e-12


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def spd_solve(S, rhs, what="S", time=None):
    """Solve ``S x = rhs`` for symmetric positive definite ``S``.

    Raises DegenerateGainError when the Cholesky pivots fall below the
    relative pivot tolerance.
    """
    if S.shape == (1, 1):
        s = S[0, 0]
        if not s > PIVOT_TOL * max(1.0, abs(s)):
            raise DegenerateGainError(f"{what} is not positive definite (value {s!r})", time)
        return rhs / s
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise DegenerateGainError(f"{what} is not positive definite", time) from None
    if np.min(np.diag(chol)) ** 2 <= PIVOT_TOL * max(1.0, np.max(np.abs(S))):
        raise DegenerateGainError(f"{what} is numerically singular", time)
    return np.linalg.solve(S, rhs)


def uniform_grid(t0, t1, steps_per_unit, min_steps=1):
    n = max(min_steps, int(math.ceil((t1 - t0) * steps_per_unit - 1e-9)))
    return np.linspace(t0, t1, n + 1)


def check_uniform(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-d array with at least two points")
    steps = np.diff(grid)
    h = (grid[-1] - grid[0]) / (grid.size - 1)
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(grid[-1])):
        raise ValueError("grid must be uniform and increasing")
    return grid, h


def half_grid(grid):
    """Nodes and midpoints of a uniform grid, interleaved (length 2N+1)."""
    out = np.empty(2 * grid.size - 1)
    out[0::2] = grid
    out[1::2] = 0.5 * (grid[:-1] + grid[1:])
    return out


def rk4_backward(rhs, terminal, h, n_steps, post=None):
    """Integrate ``y' = rhs(j, y)`` backward from node ``n_steps`` to node 0.

    ``j`` indexes the half grid: ``2n`` is node ``n`` and ``2n+1`` the
    midpoint between nodes ``n`` and ``n+1``.  Returns node values and the
    derivative at each node.
    """
    y = np.array(terminal, dtype=float)
    vals = np.empty((n_steps + 1,) + y.shape)
    ders = np.empty_like(vals)
    vals[n_steps] = y
    for n in range(n_steps - 1, -1, -1):
        j = 2 * n + 2
        k1 = rhs(j, y)
        ders[n + 1] = k1
        k2 = rhs(j - 1, y - 0.5 * h * k1)
        k3 = rhs(j - 1, y - 0.5 * h * k2)
        k4 = rhs(j - 2, y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if post is not None:
            y = post(y)
        vals[n] = y
    ders[0] = rhs(0, y)
    return vals, ders


def rk4_forward(rhs, initial, h, n_steps):
    y = np.array(initial, dtype=float)
    vals = np.empty((n_steps + 1,) + y.shape)
    vals[0] = y
    for n in range(n_steps):
        j = 2 * n
        k1 = rhs(j, y)
        k2 = rhs(j + 1, y + 0.5 * h * k1)
        k3 = rhs(j + 1, y + 0.5 * h * k2)
        k4 = rhs(j + 2, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        vals[n + 1] = y
    return vals


class HermitePath:
    """Piecewise cubic Hermite interpolant of an ODE solution on a grid.

    Outside the grid the end values are held constant.
    """

    def __init__(self, grid, values, derivatives):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.derivatives = np.asarray(derivatives, dtype=float)
        self._spline = None
        if self.values[0].size:
            self._spline = CubicHermiteSpline(self.grid, self.values, self.derivatives, axis=0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self._spline is None:
            return np.zeros(t.shape + self.values.shape[1:])
        return self._spline(np.clip(t, self.grid[0], self.grid[-1]))


def adaptive_simpson(f, a, b, tol=1e-10, max_depth=50):
    """Adaptive Simpson quadrature of a scalar function on ``[a, b]``."""
    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        fl, fr = f(0.5 * (lo + mid)), f(0.5 * (mid + hi))
        left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi)
        diff = left + right - est
        if depth >= max_depth or abs(diff) <= 15.0 * eps:
            total += left + right + diff / 15.0
        else:
            stack.append((mid, hi, fmid, fr, fhi, right, 0.5 * eps, depth + 1))
            stack.append((lo, mid, flo, fl, fmid, left, 0.5 * eps, depth + 1))
    return total


def pairwise_mean(x, axis=0):
    # numpy's add.reduce already sums contiguous blocks pairwise
    return np.add.reduce(np.asarray(x, dtype=float), axis=axis) / np.shape(x)[axis]

