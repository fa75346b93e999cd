"""Particle simulation of controlled McKean-Vlasov dynamics.

Particles follow an Euler-Maruyama scheme in which the mean-field terms use
either the analytic mean of the optimal law or the empirical particle mean.
Randomness comes from a counter-based generator keyed by (seed, stream,
step), so particle ``i`` sees the same noise regardless of the ensemble size
and two runs with the same seed are identical.
"""

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .bsde import truncation_horizon
from .control import mean_state_ode, optimal_control
from .errors import DomainError, SimulationBlowUpError

STATE_STREAM, FACTOR_STREAM, INITIAL_STREAM = 0, 1, 2
DEFAULT_RECORDS = 100


class CounterRng:
    """Stateless normal draws addressed by ``(stream, index)``."""

    def __init__(self, seed):
        if not 0 <= int(seed) < 2**64:
            raise DomainError("seed must fit in 64 bits")
        self.seed = int(seed)

    def normals(self, stream, index, shape):
        bitgen = np.random.Philox(key=self.seed + (stream << 64), counter=[0, 0, 0, index])
        return np.random.Generator(bitgen).standard_normal(shape)


def thread_cap():
    """Parallelism cap from ``LQMKV_THREADS`` (the simulator itself is serial)."""
    try:
        return max(1, int(os.environ.get("LQMKV_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SimulationConfig:
    """Particle simulation settings.

    Attributes:
        n_particles: ensemble size.
        dt: Euler step; defaults to 1e-3 on a finite horizon and 1e-2 on
            the infinite one.
        seed: generator key.
        mean_mode: "analytic" uses the policy's own mean path, "empirical"
            the particle average.
        antithetic: pair particle ``i`` with ``i + n/2`` using negated noise.
        factor_sharing: "independent" draws one factor path per particle,
            "common" one path for the whole ensemble.
        horizon: truncation time on the infinite horizon.
        records: number of recording intervals for stored trajectories.
        noise_substeps: draw increments on a grid this many times finer and
            sum them, so runs with different ``dt`` share Brownian paths.
    """

    n_particles: int = 20000
    dt: float | None = None
    seed: int = 0
    mean_mode: str = "analytic"
    antithetic: bool = False
    factor_sharing: str = "independent"
    horizon: float | None = None
    records: int = DEFAULT_RECORDS
    noise_substeps: int = 1

    def __post_init__(self):
        if self.n_particles < 1:
            raise DomainError("need at least one particle")
        if self.antithetic and self.n_particles % 2:
            raise DomainError("antithetic sampling needs an even particle count")
        if self.mean_mode not in ("analytic", "empirical"):
            raise DomainError(f"unknown mean mode {self.mean_mode!r}")
        if self.factor_sharing not in ("independent", "common"):
            raise DomainError(f"unknown factor sharing {self.factor_sharing!r}")
        if self.dt is not None and not self.dt > 0:
            raise DomainError("dt must be positive")

    def resolve(self, problem):
        """Fill in horizon-dependent defaults."""
        dt = self.dt if self.dt is not None else (1e-3 if problem.is_finite else 1e-2)
        horizon = problem.horizon if problem.is_finite else (self.horizon or truncation_horizon(problem.rho))
        return replace(self, dt=dt, horizon=horizon)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Control rule ``(step, t, x, xbar, f) -> (n, m)`` evaluated per step."""

    def reset(self, dt):
        pass

    def mean_path(self):
        """Optional ``(state_mean(t), control_mean(t))`` for analytic mean mode."""
        return None


class FeedbackPolicy(Policy):
    """The optimal feedback law, with its analytic mean path."""

    def __init__(self, problem, law):
        self.problem = problem
        self.law = law
        grid, path = mean_state_ode(problem, law)
        self._grid, self._path = grid, path

    def __call__(self, step, t, x, xbar, f):
        return optimal_control(self.law, t, x, xbar, f)

    def mean_state(self, t):
        return np.array([np.interp(t, self._grid, self._path[:, i]) for i in range(self._path.shape[1])])

    def mean_path(self):
        return self.mean_state, lambda t, xbar: self.law.mean_control(t, xbar)


class ScaledPolicy(Policy):
    def __init__(self, base, scale):
        self.base, self.scale = base, float(scale)

    def reset(self, dt):
        self.base.reset(dt)

    def __call__(self, step, t, x, xbar, f):
        return self.scale * self.base(step, t, x, xbar, f)


class ShiftedPolicy(Policy):
    """Base control plus ``eps * direction(t)``."""

    def __init__(self, base, direction, eps=1.0):
        self.base, self.eps = base, float(eps)
        self.direction = direction if callable(direction) else (lambda t, d=np.asarray(direction, float): d)

    def reset(self, dt):
        self.base.reset(dt)

    def __call__(self, step, t, x, xbar, f):
        return self.base(step, t, x, xbar, f) + self.eps * np.asarray(self.direction(t), dtype=float)


class DelayedPolicy(Policy):
    """Applies the base control computed ``delay`` time units earlier.

    Before ``delay`` has elapsed the initial control is held.
    """

    def __init__(self, base, delay):
        self.base, self.delay = base, float(delay)
        self._buf, self._lag = [], 0

    def reset(self, dt):
        self.base.reset(dt)
        self._buf = []
        self._lag = int(round(self.delay / dt))

    def __call__(self, step, t, x, xbar, f):
        self._buf.append(self.base(step, t, x, xbar, f))
        if len(self._buf) > self._lag + 1:
            self._buf.pop(0)
        return self._buf[0]


class OpenLoopPolicy(Policy):
    """Deterministic control path ``t -> (m,)``."""

    def __init__(self, path):
        self.path = path if callable(path) else (lambda t, a=np.asarray(path, float): a)

    def __call__(self, step, t, x, xbar, f):
        a = np.asarray(self.path(t), dtype=float)
        return np.broadcast_to(a, (x.shape[0], a.size))


# ---------------------------------------------------------------------------
# simulation


@dataclass
class EnsemblePath:
    """Recorded trajectories and per-particle costs.

    ``running_cost`` holds the discounted running cost integrated up to each
    record time; ``cost`` is the total per particle including the terminal
    term.
    """

    config: SimulationConfig
    times: np.ndarray
    record_steps: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    factors: np.ndarray
    mean_states: np.ndarray
    running_cost: np.ndarray
    cost: np.ndarray
    control_energy: float
    state_energy: float
    sup_mean_cost: float
    tail_bound: float
    extra: dict = field(default_factory=dict)

    @property
    def n_particles(self):
        return self.cost.size


def running_cost(problem, t, x, xbar, a, abar, f):
    """Per-particle running cost (undiscounted)."""
    p = problem
    Q, Qh = p.Q(t), p.Q(t) + p.Qt(t)
    N, Nh = p.N(t), p.N(t) + p.Nt(t)
    I, Ih = p.I(t), p.I(t) + p.It(t)
    xc, ac = x - xbar, a - abar
    out = np.einsum("na,ab,nb->n", xc, Q, xc) + 2.0 * np.einsum("na,ab,nb->n", ac, I, xc)
    out += np.einsum("na,ab,nb->n", ac, N, ac)
    out += xbar @ Qh @ xbar + 2.0 * abar @ Ih @ xbar + abar @ Nh @ abar
    M = p.M.value(t, f)
    H = p.H.value(t, f)
    out = out + 2.0 * np.sum(M * x, axis=1) + 2.0 * np.sum(H * a, axis=1)
    return out


def terminal_cost(problem, x, xbar, f):
    p = problem
    T = p.horizon
    xc = x - xbar
    Ph = p.P + p.Pt
    L = p.L.value(T, f)
    return np.einsum("na,ab,nb->n", xc, p.P, xc) + xbar @ Ph @ xbar + 2.0 * np.sum(L * x, axis=1)


def _initial_states(problem, rng, n, antithetic):
    d = problem.d
    mean, cov = problem.x0_mean, problem.x0_cov
    if not np.any(cov):
        return np.broadcast_to(mean, (n, d)).copy()
    chol = np.linalg.cholesky(cov + 1e-300 * np.eye(d))
    z = _draw(rng, INITIAL_STREAM, 0, n, d, antithetic)
    return mean + z @ chol.T


def _draw(rng, stream, index, n, width, antithetic):
    if antithetic:
        z = rng.normals(stream, index, (n // 2, width))
        return np.concatenate([z, -z])
    return rng.normals(stream, index, (n, width))


def _increments(rng, stream, step, n, width, dt, substeps, antithetic):
    if width == 0:
        return np.zeros((n, 0))
    if substeps == 1:
        return math.sqrt(dt) * _draw(rng, stream, step, n, width, antithetic)
    sub = dt / substeps
    total = np.zeros((n, width))
    for j in range(substeps):
        total += _draw(rng, stream, step * substeps + j, n, width, antithetic)
    return math.sqrt(sub) * total


def simulate_particles(problem, policy, config=None):
    """Simulate the controlled particle system.

    Args:
        problem: LqmkvProblem.
        policy: a Policy; in analytic mean mode it must provide a mean path.
        config: SimulationConfig; defaults are resolved against the problem.

    Returns:
        EnsemblePath.
    """
    cfg = (config or SimulationConfig()).resolve(problem)
    p = problem
    n, d, m, nw = cfg.n_particles, p.d, p.m, p.n_noises
    dt, T = cfg.dt, cfg.horizon
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise DomainError("dt must divide the horizon")
    substeps = cfg.noise_substeps
    rng = CounterRng(cfg.seed)
    mean_fns = policy.mean_path() if cfg.mean_mode == "analytic" else None
    if cfg.mean_mode == "analytic" and mean_fns is None:
        raise DomainError("analytic mean mode needs a policy with a mean path")

    fac = p.factor
    k = p.factor_dim
    shared = fac is not None and fac.shared_noise is not None
    n_fac = 1 if cfg.factor_sharing == "common" else n
    x = _initial_states(p, rng, n, cfg.antithetic)
    f = np.broadcast_to(fac.initial, (n_fac, k)).copy() if k else np.zeros((n, 0))
    rec_every = max(1, n_steps // max(1, cfg.records))
    record_steps = np.unique(np.append(np.arange(0, n_steps + 1, rec_every), n_steps))
    R = record_steps.size
    states = np.empty((R, n, d))
    controls = np.empty((R, n, m))
    factors = np.empty((R, n, k))
    mean_states = np.empty((R, d))
    run_cost = np.empty((R, n))
    policy.reset(dt)

    B, Bt, C, Ct = p.B, p.Bt, p.C, p.Ct
    cum = np.zeros(n)
    ctrl_energy = state_energy = 0.0
    sup_mean = 0.0
    r = 0
    for step in range(n_steps + 1):
        t = step * dt
        xbar = mean_fns[0](t) if mean_fns is not None else x.mean(axis=0)
        a = np.broadcast_to(np.asarray(policy(step, t, x, xbar, f), dtype=float), (n, m))
        abar = mean_fns[1](t, xbar) if mean_fns is not None else a.mean(axis=0)
        emp_x, emp_a = x.mean(axis=0), a.mean(axis=0)
        if r < R and step == record_steps[r]:
            states[r], controls[r] = x, a
            factors[r] = np.broadcast_to(f, (n, k))
            mean_states[r] = emp_x
            run_cost[r] = cum
            r += 1
        if step == n_steps:
            break

        # the control is held over the step; state and factor move
        disc = math.exp(-p.rho * t)
        left = running_cost(p, t, x, emp_x, a, emp_a, f)
        dw = _increments(rng, STATE_STREAM, step, n, nw, dt, substeps, cfg.antithetic)
        beta = p.beta.value(t, f)
        drift = beta + x @ B(t).T + xbar @ Bt(t).T + a @ C(t).T + abar @ Ct(t).T
        x_new = x + drift * dt
        if nw:
            gamma = p.gamma.value(t, f)
            D, Dt, F, Ft = p.D(t), p.Dt(t), p.F(t), p.Ft(t)
            for i in range(nw):
                vol = gamma[:, i] + x @ D[i].T + xbar @ Dt[i].T + a @ F[i].T + abar @ Ft[i].T
                x_new = x_new + vol * dw[:, i:i + 1]
        if k:
            if shared:
                dwf = dw[:n_fac, fac.shared_noise:fac.shared_noise + 1]
            else:
                dwf = _increments(rng, FACTOR_STREAM, step, n_fac, fac.n_noises, dt, substeps,
                                  cfg.antithetic and n_fac == n)
            f = fac.step(t, f, dt, dwf)
        x = x_new
        if not np.all(np.isfinite(x)):
            raise SimulationBlowUpError("particle states became non-finite", t)
        t1 = t + dt
        disc1 = math.exp(-p.rho * t1)
        right = running_cost(p, t1, x, x.mean(axis=0), a, emp_a, f)
        cum += 0.5 * dt * (disc * left + disc1 * right)
        a2 = float(np.mean(np.sum(a * a, axis=1)))
        ctrl_energy += 0.5 * dt * (disc + disc1) * a2
        state_energy += dt * disc * float(np.mean(np.sum(x * x, axis=1)))
        sup_mean = max(sup_mean, abs(float(np.mean(left))))

    cost = cum.copy()
    if p.is_finite:
        xbar_T = x.mean(axis=0)
        cost += math.exp(-p.rho * T) * terminal_cost(p, x, xbar_T, f)
    tail = 0.0 if p.is_finite else math.exp(-p.rho * T) * sup_mean / p.rho
    return EnsemblePath(cfg, record_steps * dt, record_steps, states, controls, factors, mean_states,
                        run_cost, cost, ctrl_energy, state_energy, sup_mean, tail)


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    se: float
    n: int
    tail_bound: float = 0.0


def estimate_cost(ensemble):
    """Monte-Carlo cost with standard error.

    Antithetic pairs are averaged first so the error reflects the pairing.
    """
    c = ensemble.cost
    if ensemble.config.antithetic:
        half = c.size // 2
        c = 0.5 * (c[:half] + c[half:])
    return CostEstimate(float(np.mean(c)), float(np.std(c, ddof=1) / math.sqrt(c.size)), c.size,
                        ensemble.tail_bound)


# ---------------------------------------------------------------------------
# verification diagnostics


@dataclass(frozen=True)
class OptimalityDiagnostic:
    """Mean of the value-plus-cost process along record times.

    ``increment_se`` are standard errors of the paired differences used for
    the verdict: against time 0 when checking flatness, between consecutive
    times when checking monotonicity.
    """

    times: np.ndarray
    mean: np.ndarray
    drift_from_start: np.ndarray
    drift_se: np.ndarray
    step_increments: np.ndarray
    step_se: np.ndarray
    flat: bool
    nondecreasing: bool


def value_process(problem, solution, ensemble):
    """Per-particle discounted value plus accumulated cost at record times."""
    ric, adj = solution.riccati, solution.adjoint
    times = ensemble.times
    out = np.empty((times.size, ensemble.n_particles))
    for r, t in enumerate(times):
        x = ensemble.states[r]
        xbar = ensemble.mean_states[r]
        K = np.asarray(ric.K_at(t))
        Lam = np.asarray(ric.Lambda_at(t))
        Y = np.broadcast_to(adj.Y(t, ensemble.factors[r] if problem.factor_dim else None), x.shape)
        xc = x - xbar
        w = np.einsum("na,ab,nb->n", xc, K, xc) + xbar @ Lam @ xbar + 2.0 * np.sum(Y * x, axis=1) + adj.R_at(t)
        out[r] = math.exp(-problem.rho * t) * w + ensemble.running_cost[r]
    return out


def martingale_diagnostic(problem, solution, policy, config=None, n_sigma=3.0):
    """Simulate ``policy`` and test the mean of the value process.

    For the optimal policy the mean is flat; for any admissible policy it is
    nondecreasing.  Both verdicts allow ``n_sigma`` paired standard errors.
    """
    ens = simulate_particles(problem, policy, config)
    proc = value_process(problem, solution, ens)
    if ens.config.antithetic:
        half = proc.shape[1] // 2
        proc = 0.5 * (proc[:, :half] + proc[:, half:])
    n = proc.shape[1]
    mean = proc.mean(axis=1)
    drift = proc - proc[:1]
    d_mean = drift.mean(axis=1)
    d_se = drift.std(axis=1, ddof=1) / math.sqrt(n)
    steps = np.diff(proc, axis=0)
    s_mean = steps.mean(axis=1)
    s_se = steps.std(axis=1, ddof=1) / math.sqrt(n)
    slack = 1e-9 * max(1.0, float(np.max(np.abs(mean))))
    flat = bool(np.all(np.abs(d_mean) <= n_sigma * d_se + slack))
    nondecreasing = bool(np.all(s_mean >= -n_sigma * s_se - slack))
    return OptimalityDiagnostic(ens.times, mean, d_mean, d_se, s_mean, s_se, flat, nondecreasing)


@dataclass(frozen=True)
class PerturbationResult:
    eps: float
    delta: float
    delta_se: float
    delta_double: float
    delta_double_se: float

    @property
    def ratio(self):
        return self.delta_double / self.delta if self.delta != 0 else math.inf


def perturbation_test(problem, solution, direction, eps, config=None):
    """Cost increase from adding ``eps * direction`` and ``2 eps * direction``
    to the optimal feedback, with common random numbers."""
    cfg = replace(config or SimulationConfig(), mean_mode="empirical")
    base = FeedbackPolicy(problem, solution.law)
    c0 = simulate_particles(problem, base, cfg).cost
    c1 = simulate_particles(problem, ShiftedPolicy(base, direction, eps), cfg).cost
    c2 = simulate_particles(problem, ShiftedPolicy(base, direction, 2 * eps), cfg).cost
    d1, d2 = c1 - c0, c2 - c0
    if cfg.antithetic:
        half = d1.size // 2
        d1, d2 = 0.5 * (d1[:half] + d1[half:]), 0.5 * (d2[:half] + d2[half:])
    root_n = math.sqrt(d1.size)
    return PerturbationResult(float(eps), float(d1.mean()), float(d1.std(ddof=1) / root_n),
                              float(d2.mean()), float(d2.std(ddof=1) / root_n))


def ensemble_summary(ensemble):
    """Per record time: mean, 5% and 95% quantiles of each state component."""
    rows = []
    for r, t in enumerate(ensemble.times):
        x = ensemble.states[r]
        row = [t]
        for i in range(x.shape[1]):
            q05, q95 = np.quantile(x[:, i], [0.05, 0.95])
            row += [float(x[:, i].mean()), float(q05), float(q95)]
        rows.append(row)
    header = ["t"]
    for i in range(ensemble.states.shape[2]):
        header += [f"mean_x{i}", f"q05_x{i}", f"q95_x{i}"]
    return header, rows
