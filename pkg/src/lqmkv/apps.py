"""Closed-form oracles and problem builders for two applications.

Liquidation: sell an inventory ``x0`` over ``[0, T]`` with quadratic
temporary cost, a running inventory penalty ``q``, a terminal penalty ``p``
and a permanent price impact ``nu`` driven by the mean trading rate.

Resource: extract from a reserve on an infinite horizon with proportional
volatility ``sigma``, a sale price factor, and quadratic costs that treat the
individual and the mean extraction rate differently (``eta``, ``eps``).

Cost weights in the liquidation builder are divided by the temporary impact
``eta``, so the solved control is for the normalized problem.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._numerics import adaptive_simpson
from .errors import DomainError
from .factors import ArithmeticBrownian, FactorModel
from .model import AffineChannel, LqmkvProblem

FIGURE1_NUS = (0.1, 0.5, 1.0, 2.0)
FIGURE2_QS = (0.0, 0.5, 1.0, 2.0, 4.0)


# ---------------------------------------------------------------------------
# liquidation


@dataclass(frozen=True)
class LiquidationParams:
    """Normalized liquidation data; ``price`` is the unaffected price factor."""

    x0: float = 30.0
    T: float = 2.0
    q: float = 1.0
    p: float = 10.0
    nu: float = 1.0
    eta: float = 1.0
    price: FactorModel = field(default_factory=lambda: ArithmeticBrownian(10.0, 0.0, 1.0))

    def __post_init__(self):
        if not (self.T > 0 and self.q >= 0 and self.p >= 0 and self.nu >= 0 and self.eta > 0):
            raise DomainError("liquidation needs T > 0, q, p, nu >= 0 and eta > 0")

    @property
    def normalized(self):
        """``(q, p, nu)`` after dividing by the temporary impact."""
        return self.q / self.eta, self.p / self.eta, self.nu / self.eta


def _sh_ch(x):
    """``(sinh(x) e^-x, cosh(x) e^-x)`` without overflow."""
    e = math.exp(-2.0 * x)
    return 0.5 * (1.0 - e), 0.5 * (1.0 + e)


def liq_K(t, p, q, T):
    """Centered gain with terminal weight ``p``."""
    tau = T - t
    if tau < 0:
        raise DomainError("t must lie in [0, T]")
    if q == 0:
        return p / (p * tau + 1.0)
    r = math.sqrt(q)
    th = math.tanh(r * tau)
    return r * (r * th + p) / (p * th + r)


def liq_K_nu(t, p, q, nu, T):
    """Mean gain ``Lambda + nu``; the centered gain with terminal weight ``p + nu``."""
    return liq_K(t, p + nu, q, T)


def liq_Lambda(t, p, q, nu, T):
    return liq_K_nu(t, p, q, nu, T) - nu


def liq_omega(tau, p, q, nu=0.0):
    """``exp(-int_{T-tau}^T K_nu) * K_nu(T - tau) / (p + nu)``: decay of the gain kernel."""
    a = p + nu
    if q == 0:
        return 1.0
    r = math.sqrt(q)
    sh, ch = _sh_ch(r * tau)
    return a * math.exp(-r * tau) / (r * sh + a * ch)


def liq_pi(tau, p, q, nu=0.0):
    """``exp(-int_{T-tau}^T K_nu)``: survival factor of the mean gain."""
    a = p + nu
    if q == 0:
        return 1.0 / (1.0 + a * tau)
    r = math.sqrt(q)
    x = r * tau
    sh, ch = _sh_ch(x)
    # sinh(x)/r computed stably for small r
    sh_over_r = tau * (-math.expm1(-2.0 * x)) / (2.0 * x) if x > 0 else tau
    return math.exp(-x) / (ch + a * sh_over_r)


def _decay(t, s, p, q, nu, T):
    """``exp(-int_t^s K_nu)`` for ``t <= s``."""
    return liq_pi(T - t, p, q, nu) / liq_pi(T - s, p, q, nu)


def liq_alpha0(params):
    """Optimal initial trading rate for a martingale price."""
    q, p, nu = params.normalized
    T, x0 = params.T, params.x0
    s0 = params.price.x0 / params.eta
    pT = liq_pi(T, p, q, nu)
    return -(liq_K_nu(0.0, p, q, nu, T) - 0.5 * nu * pT) * x0 - 0.5 * s0 * pT


def liq_mean_inventory(t, params):
    """Expected optimal inventory at time ``t``.

    Uses the hyperbolic closed form for a martingale price (linear when
    ``q = 0``) and nested quadrature of the mean dynamics otherwise.
    """
    q, p, nu = params.normalized
    T, x0 = params.T, params.x0
    if not 0.0 <= t <= T:
        raise DomainError("t must lie in [0, T]")
    if not params.price.is_martingale:
        return _mean_inventory_quadrature(t, params)
    s0 = params.price.x0 / params.eta
    if q == 0:
        denom = 1.0 + (p + nu) * T
        return x0 * (1.0 - (p + 0.5 * nu) * t / denom) - 0.5 * s0 * t / denom
    r = math.sqrt(q)
    return x0 * math.cosh(r * t) + liq_alpha0(params) * math.sinh(r * t) / r


def _price_nu_mean(s, params):
    q, p, nu = params.normalized
    return float(params.price.mean(s)) / params.eta - nu * params.x0


def _mean_inventory_quadrature(t, params, tol=1e-10):
    q, p, nu = params.normalized
    T, x0 = params.T, params.x0

    def inner(s):
        g = adaptive_simpson(lambda r: liq_K_nu(r, p, q, nu, T) * _decay(s, r, p, q, nu, T)
                             * _price_nu_mean(r, params), s, T, tol)
        return _decay(s, t, p, q, nu, T) * (g - _price_nu_mean(s, params))

    return x0 * _decay(0.0, t, p, q, nu, T) + 0.5 * adaptive_simpson(inner, 0.0, t, tol)


def liq_optimal_control(t, X, S, params, tol=1e-11):
    """Optimal trading rate from the explicit decomposition.

    Args:
        t: time in ``[0, T]``.
        X: inventory (scalar or array).
        S: current unaffected price (same shape as ``X`` or scalar), in
            unnormalized units.
        params: LiquidationParams.
    """
    q, p, nu = params.normalized
    T, x0, eta = params.T, params.x0, params.eta
    price = params.price
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=float) / eta
    Kt, Knt = liq_K(t, p, q, T), liq_K_nu(t, p, q, nu, T)

    def mean(s):
        return float(price.mean(s)) / eta

    def w0(s):
        return Kt * liq_omega(T - t, p, q) / liq_omega(T - s, p, q)

    def wn(s):
        return Knt * liq_omega(T - t, p, q, nu) / liq_omega(T - s, p, q, nu)

    # the conditional mean is affine in the current price
    m_t = mean(t)
    a0 = adaptive_simpson(lambda s: w0(s) * (mean(s) - price.transition(t, s) * m_t), t, T, tol)
    b0 = adaptive_simpson(lambda s: w0(s) * price.transition(t, s), t, T, tol)
    out = -Kt * X + 0.5 * (a0 + b0 * S - S)
    pn_t = liq_pi(T - t, p, q, nu)
    out = out + x0 * 0.5 * nu * pn_t
    i2 = adaptive_simpson(lambda s: liq_pi(T - s, p, q, nu) ** 2, 0.0, t, tol) / pn_t
    out = out - x0 * (Knt - Kt) * (liq_pi(T, p, q, nu) / pn_t + 0.5 * nu * i2)

    def bracket(s):
        ks = liq_K_nu(s, p, q, nu, T)
        w = adaptive_simpson(lambda r: ks * liq_omega(T - s, p, q, nu) / liq_omega(T - r, p, q, nu) * mean(r),
                             s, T, tol)
        return liq_pi(T - s, p, q, nu) / pn_t * (w - mean(s))

    out = out - 0.5 * (Knt - Kt) * adaptive_simpson(bracket, 0.0, t, tol)
    out = out + 0.5 * adaptive_simpson(lambda s: (wn(s) - w0(s)) * mean(s), t, T, tol)
    return out


def liq_control_gap(t, params):
    """Deterministic gap between the optimal rate with and without permanent
    impact, for a martingale price."""
    q, p, nu = params.normalized
    T, x0 = params.T, params.x0
    s0 = params.price.x0 / params.eta
    Kt, Knt = liq_K(t, p, q, T), liq_K_nu(t, p, q, nu, T)
    pn_t = liq_pi(T - t, p, q, nu)
    i2 = adaptive_simpson(lambda s: liq_pi(T - s, p, q, nu) ** 2, 0.0, t, 1e-12) / pn_t
    gap_x = 0.5 * nu * pn_t - (Knt - Kt) * (liq_pi(T, p, q, nu) / pn_t + 0.5 * nu * i2)
    gap_s = (Knt - Kt) * i2 + (liq_pi(T - t, p, q) - pn_t)
    return x0 * gap_x + 0.5 * s0 * gap_s


def liquidation_problem(params):
    """Generic problem instance for the (normalized) liquidation model.

    The price factor enters the cross term ``H = (S / eta - nu x0) / 2``.
    """
    q, p, nu = params.normalized
    H = AffineChannel([-0.5 * nu * params.x0], [[0.5 / params.eta]])
    return LqmkvProblem.create(1, 1, n_noises=0, horizon=params.T, C=1.0, Q=q, N=1.0, It=nu, P=p, H=H,
                               x0_mean=params.x0, factor=params.price, name="liquidation")


def figure1_data(ts=None, nus=FIGURE1_NUS, base=None):
    """Mean inventory curves for several permanent impacts."""
    base = base or LiquidationParams()
    ts = np.linspace(0.0, base.T, 201) if ts is None else np.asarray(ts, dtype=float)
    cols = [np.array([liq_mean_inventory(t, replace_params(base, nu=nu)) for t in ts]) for nu in nus]
    return ts, np.column_stack(cols)


def figure2_data(ts=None, qs=FIGURE2_QS, base=None):
    """Mean inventory curves for several inventory penalties."""
    base = base or LiquidationParams()
    ts = np.linspace(0.0, base.T, 201) if ts is None else np.asarray(ts, dtype=float)
    cols = [np.array([liq_mean_inventory(t, replace_params(base, q=q)) for t in ts]) for q in qs]
    return ts, np.column_stack(cols)


def replace_params(params, **changes):
    kw = {k: getattr(params, k) for k in params.__dataclass_fields__}
    kw.update(changes)
    return type(params)(**kw)


# ---------------------------------------------------------------------------
# resource


@dataclass(frozen=True)
class ResourceParams:
    rho: float = 0.5
    sigma: float = 0.3
    c: float = 1.0
    delta: float = 1.0
    eps: float = 0.5
    eta: float = 0.5
    x0: float = 1.0
    price: FactorModel = field(default_factory=lambda: ArithmeticBrownian(0.5, 0.0, 0.2))

    def __post_init__(self):
        if not (self.rho > self.sigma**2 and self.c > 0 and self.delta + self.eps > 0 and self.delta + self.eta > 0):
            raise DomainError("resource needs rho > sigma^2, c > 0, delta + eps > 0 and delta + eta > 0")


def res_K(params):
    """Stationary centered coefficient (the root reached from zero data)."""
    a = params.rho - params.sigma**2
    b = params.c + (params.delta + params.eta) * a
    return -params.c**2 / (2.0 * (b + math.sqrt(b * b - params.c**2)))


def res_gains(params):
    """``(K_eta, Lambda_eps)``: the centered and mean feedback rates."""
    rho, c = params.rho, params.c
    a = rho - params.sigma**2
    de, dn = params.delta + params.eta, params.delta + params.eps
    k_eta = c * a / (de * (a + math.sqrt(a * a + 2.0 * c * a / de)))
    w = 2.0 * (rho * c + 2.0 * params.sigma**2 * res_K(params)) / dn
    lam_eps = w / (2.0 * (rho + math.sqrt(rho * rho + w)))
    return k_eta, lam_eps


def res_Lambda(params):
    _, lam_eps = res_gains(params)
    return (params.delta + params.eps) * lam_eps - 0.5 * params.c


def res_stationary_reserve(params, pbar=None, tol=1e-10):
    """Long-run mean reserve for a price with stationary mean ``pbar``.

    Computed from the mean-rate form and checked against the form that
    depends on the centered rate only.
    """
    if pbar is None:
        pbar = _stationary_mean(params.price)
    rho, s2, c = params.rho, params.sigma**2, params.c
    k_eta, lam_eps = res_gains(params)
    via_mean = rho * (c * params.x0 - pbar) / (2.0 * (params.delta + params.eps) * lam_eps * (rho + lam_eps))
    via_centered = (k_eta + rho - s2) / (k_eta + rho) * rho / (rho - s2) * (params.x0 - pbar / c)
    if abs(via_mean - via_centered) > tol * max(1.0, abs(via_centered)):
        raise DomainError(f"stationary reserve forms disagree: {via_mean!r} vs {via_centered!r}")
    return via_mean


def _stationary_mean(price):
    if price.is_martingale:
        return price.x0
    if price.kind == "ou":
        return price.theta
    raise DomainError("price mean has no stationary level")


def _laplace_mean(price, t, decay):
    """``int_0^inf e^{-decay v} m(t + v) dv`` in closed form."""
    if price.kind == "abm":
        return (price.x0 + price.mu * t) / decay + price.mu / decay**2
    if price.kind == "gbm":
        if not decay > price.mu:
            raise DomainError("price mean grows faster than the discount")
        return price.x0 * math.exp(price.mu * t) / (decay - price.mu)
    if price.kind == "ou":
        dev = (price.x0 - price.theta) * math.exp(-price.kappa * t)
        return price.theta / decay + dev / (decay + price.kappa)
    raise DomainError(f"no closed-form mean transform for {price.kind!r}")


def res_mean_Y(t, params):
    """Mean adjoint on the resource instance."""
    _, lam = res_gains(params)
    rho = params.rho
    disc = lam * _laplace_mean(params.price, t, rho + lam)
    return -0.5 * (disc - params.c * params.x0 * lam / (rho + lam))


def res_mean_reserve(t, params, tol=1e-11):
    """Expected optimal reserve by quadrature of the mean dynamics."""
    _, lam = res_gains(params)
    rho, c, x0 = params.rho, params.c, params.x0
    dn = params.delta + params.eps
    price = params.price

    def integrand(s):
        m = float(price.mean(s))
        return math.exp(-lam * (t - s)) * (m - lam * _laplace_mean(price, s, rho + lam))

    out = x0 * math.exp(-lam * t) + rho * c * x0 / (2.0 * dn) * (-math.expm1(-lam * t)) / (lam * (rho + lam))
    return out - adaptive_simpson(integrand, 0.0, t, tol) / (2.0 * dn)


def res_optimal_control(t, X, Xbar, P, params):
    """Optimal extraction rate for reserve ``X``, mean reserve ``Xbar`` and price ``P``."""
    k_eta, lam = res_gains(params)
    rho, c, x0 = params.rho, params.c, params.x0
    price = params.price
    X, Xbar, P = (np.asarray(v, dtype=float) for v in (X, Xbar, P))
    m_t = float(price.mean(t))
    # conditional deviation decays at the factor's centered drift
    centered = (P - m_t) * (1.0 - k_eta / (rho + k_eta - price.centered_drift))
    mean_part = m_t - lam * _laplace_mean(price, t, rho + lam) - c * x0 * rho / (rho + lam)
    return (k_eta * (X - Xbar) + lam * Xbar + centered / (2.0 * (params.delta + params.eta))
            + mean_part / (2.0 * (params.delta + params.eps)))


def resource_problem(params):
    """Generic infinite-horizon instance of the resource model."""
    H = AffineChannel([0.5 * params.c * params.x0], [[-0.5]])
    return LqmkvProblem.create(
        1, 1, n_noises=1, horizon=None, rho=params.rho, C=-1.0, D=[[[params.sigma]]],
        N=params.delta + params.eta, Nt=params.eps - params.eta, I=-0.5 * params.c, H=H,
        x0_mean=params.x0, factor=params.price, name="resource")
