"""Scalar factor processes that drive random coefficients.

Every built-in model has an affine conditional mean

    E[F_s | F_t] = m(s) + exp(a (s - t)) (F_t - m(t)),

where ``m`` is the unconditional mean and ``a`` the centered drift.  The
adjoint solver relies on this structure.
"""

import math
from abc import ABC, abstractmethod

import numpy as np

from .errors import DomainError


class FactorModel(ABC):
    """A one-dimensional factor SDE with deterministic initial value.

    Attributes:
        x0: initial value F_0.
        shared_noise: index of the state noise driving the factor, or None
            when the factor has its own independent Brownian motion.
    """

    dim = 1
    n_noises = 1
    kind = "abstract"

    def __init__(self, x0, shared_noise=None):
        self.x0 = float(x0)
        self.shared_noise = shared_noise

    @property
    def initial(self):
        return np.array([self.x0])

    @property
    @abstractmethod
    def centered_drift(self):
        """Constant ``a`` with d(F - m) = a (F - m) dt + dM."""

    @abstractmethod
    def mean(self, t):
        """Unconditional mean; array in, array out."""

    @abstractmethod
    def variance(self, t):
        """Unconditional variance."""

    @abstractmethod
    def diffusion(self, t, f):
        """Diffusion coefficient at state ``f``."""

    @abstractmethod
    def step(self, t, f, dt, dw):
        """Advance ``f`` over ``[t, t + dt]`` given Brownian increments ``dw``."""

    @property
    @abstractmethod
    def second_moment_growth(self):
        """Exponential growth rate of E[F_t^2]; 0 means at most polynomial."""

    @property
    def is_martingale(self):
        return False

    def transition(self, t, s):
        return math.exp(self.centered_drift * (s - t))

    def conditional_mean(self, t, s, f):
        """E[F_s | F_t = f] for s >= t."""
        if s < t:
            raise DomainError("conditional mean needs s >= t")
        return self.mean(s) + self.transition(t, s) * (np.asarray(f, dtype=float) - self.mean(t))

    def covariance(self, t):
        return np.array([[self.variance(t)]])

    def __eq__(self, other):
        return type(other) is type(self) and other.to_dict() == self.to_dict()

    def __hash__(self):
        return hash(tuple(sorted(self.to_dict().items())))

    def to_dict(self):
        out = {"type": self.kind, "x0": self.x0}
        out.update(self._params())
        return out

    def _params(self):
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.to_dict().items() if k != "type")
        return f"{type(self).__name__}({args})"


class ArithmeticBrownian(FactorModel):
    """dF = mu dt + sigma dW."""

    kind = "abm"

    def __init__(self, x0, mu=0.0, sigma=0.0, shared_noise=None):
        super().__init__(x0, shared_noise)
        self.mu = float(mu)
        self.sigma = float(sigma)

    @property
    def centered_drift(self):
        return 0.0

    def mean(self, t):
        return self.x0 + self.mu * np.asarray(t, dtype=float)

    def variance(self, t):
        return self.sigma**2 * np.asarray(t, dtype=float)

    def diffusion(self, t, f):
        return np.full_like(np.asarray(f, dtype=float), self.sigma)

    def step(self, t, f, dt, dw):
        return f + self.mu * dt + self.sigma * dw

    @property
    def second_moment_growth(self):
        return 0.0

    @property
    def is_martingale(self):
        return self.mu == 0.0

    def _params(self):
        return {"mu": self.mu, "sigma": self.sigma}


class GeometricBrownian(FactorModel):
    """dF = mu F dt + sigma F dW."""

    kind = "gbm"

    def __init__(self, x0, mu=0.0, sigma=0.0, shared_noise=None):
        super().__init__(x0, shared_noise)
        self.mu = float(mu)
        self.sigma = float(sigma)

    @property
    def centered_drift(self):
        return self.mu

    def mean(self, t):
        return self.x0 * np.exp(self.mu * np.asarray(t, dtype=float))

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        return self.x0**2 * np.exp(2 * self.mu * t) * np.expm1(self.sigma**2 * t)

    def diffusion(self, t, f):
        return self.sigma * np.asarray(f, dtype=float)

    def step(self, t, f, dt, dw):
        return f * np.exp((self.mu - 0.5 * self.sigma**2) * dt + self.sigma * dw)

    @property
    def second_moment_growth(self):
        return 2 * self.mu + self.sigma**2

    @property
    def is_martingale(self):
        return self.mu == 0.0

    def _params(self):
        return {"mu": self.mu, "sigma": self.sigma}


class OrnsteinUhlenbeck(FactorModel):
    """dF = kappa (theta - F) dt + sigma dW."""

    kind = "ou"

    def __init__(self, x0, kappa, theta=0.0, sigma=0.0, shared_noise=None):
        super().__init__(x0, shared_noise)
        if kappa <= 0:
            raise DomainError("mean reversion speed must be positive")
        self.kappa = float(kappa)
        self.theta = float(theta)
        self.sigma = float(sigma)

    @property
    def centered_drift(self):
        return -self.kappa

    def mean(self, t):
        return self.theta + (self.x0 - self.theta) * np.exp(-self.kappa * np.asarray(t, dtype=float))

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        return self.sigma**2 * -np.expm1(-2 * self.kappa * t) / (2 * self.kappa)

    def diffusion(self, t, f):
        return np.full_like(np.asarray(f, dtype=float), self.sigma)

    def step(self, t, f, dt, dw):
        # exact in law: rescale the increment to the transition variance
        decay = math.exp(-self.kappa * dt)
        scale = math.sqrt(-math.expm1(-2 * self.kappa * dt) / (2 * self.kappa * dt))
        return self.theta + (f - self.theta) * decay + self.sigma * scale * dw

    @property
    def second_moment_growth(self):
        return 0.0

    def _params(self):
        return {"kappa": self.kappa, "theta": self.theta, "sigma": self.sigma}


FACTOR_TYPES = {
    "abm": ArithmeticBrownian,
    "gbm": GeometricBrownian,
    "ou": OrnsteinUhlenbeck,
}


def factor_from_dict(spec):
    spec = dict(spec)
    kind = spec.pop("type")
    try:
        cls = FACTOR_TYPES[kind]
    except KeyError:
        raise DomainError(f"unknown factor type {kind!r}") from None
    return cls(**spec)
