"""Problem data for linear-quadratic McKean-Vlasov control and assumption checks.

A problem is described by deterministic matrix paths (``B``, ``Bt`` for the
mean-field drift loading, and so on, with the suffix ``t`` marking the
coefficient that multiplies a mean), by factor-affine random channels
(``beta``, ``gamma``, ``M``, ``H``, ``L``) and by the law of the initial state.
Quantities with a "hat" are plain plus mean-field coefficient, e.g.
``B_hat = B + Bt``.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import DomainError
from .factors import FactorModel

VALIDATION_POINTS = 1001
NONNEG_TOL = -1e-10
SYMMETRY_TOL = 1e-12


class TimePath:
    """A deterministic function of time with a fixed array shape.

    Wraps either a constant array or a callable ``t -> array``.
    """

    def __init__(self, value, shape=None):
        if isinstance(value, TimePath):
            value = value._func if value._func is not None else value._const
        if callable(value):
            self._func = value
            probe = np.asarray(value(0.0), dtype=float)
            if shape is not None:
                probe = np.broadcast_to(probe, shape)
            self._const = None
            self.shape = probe.shape
        else:
            const = np.asarray(value, dtype=float)
            if shape is not None:
                const = np.broadcast_to(const, shape).copy()
            const.setflags(write=False)
            self._func = None
            self._const = const
            self.shape = const.shape

    @property
    def is_constant(self):
        return self._func is None

    def __call__(self, t):
        if self._func is None:
            return self._const
        return np.broadcast_to(np.asarray(self._func(float(t)), dtype=float), self.shape)

    def sample(self, times):
        times = np.asarray(times, dtype=float)
        if self._func is None:
            return np.broadcast_to(self._const, times.shape + self.shape)
        return np.stack([self(t) for t in times]) if times.size else np.empty((0,) + self.shape)

    def __repr__(self):
        if self._func is None:
            return f"TimePath({self._const.tolist()!r})"
        return f"TimePath({self._func!r}, shape={self.shape})"


class AffineChannel:
    """Coefficient of the form ``a(t) + b(t) F_t`` with ``F`` a factor.

    ``loading`` is None for deterministic channels.
    """

    def __init__(self, intercept, loading=None, shape=None):
        self.intercept = TimePath(intercept, shape)
        self.shape = self.intercept.shape
        self.loading = None
        if loading is not None:
            lp = TimePath(loading)
            if lp.shape[:-1] != self.shape:
                raise DomainError(f"loading shape {lp.shape} does not match {self.shape}")
            self.loading = lp

    @classmethod
    def of(cls, value, shape):
        if isinstance(value, AffineChannel):
            if value.shape != tuple(shape):
                raise DomainError(f"channel shape {value.shape} != {tuple(shape)}")
            return value
        if value is None:
            value = 0.0
        return cls(value, shape=shape)

    @property
    def is_random(self):
        if self.loading is None:
            return False
        if self.loading.is_constant:
            return bool(np.any(self.loading(0.0) != 0.0))
        return True

    @property
    def is_constant(self):
        return self.intercept.is_constant and (self.loading is None or self.loading.is_constant)

    def sample_loading(self, times, k):
        times = np.asarray(times, dtype=float)
        if self.loading is None:
            return np.zeros(times.shape + self.shape + (k,))
        return self.loading.sample(times)

    def mean(self, t, factor=None):
        a = self.intercept(t)
        if self.loading is None or factor is None:
            return np.array(a)
        return a + self.loading(t) @ np.atleast_1d(factor.mean(t))

    def sample_mean(self, times, factor=None):
        times = np.asarray(times, dtype=float)
        a = np.array(self.intercept.sample(times))
        if self.loading is None or factor is None:
            return a
        m = np.asarray(factor.mean(times), dtype=float).reshape(times.size, factor.dim)
        return a + np.einsum("t...k,tk->t...", self.loading.sample(times), m)

    def value(self, t, f):
        """Per-particle value; ``f`` has shape (n, k)."""
        a = self.intercept(t)
        if self.loading is None:
            return np.broadcast_to(a, (np.shape(f)[0],) + self.shape)
        return a + np.einsum("...k,nk->n...", self.loading(t), f)

    def __repr__(self):
        return f"AffineChannel({self.intercept!r}, {self.loading!r})"


_MATRIX_FIELDS = {
    # name: shape builder from (d, m, n)
    "B": lambda d, m, n: (d, d),
    "Bt": lambda d, m, n: (d, d),
    "C": lambda d, m, n: (d, m),
    "Ct": lambda d, m, n: (d, m),
    "D": lambda d, m, n: (n, d, d),
    "Dt": lambda d, m, n: (n, d, d),
    "F": lambda d, m, n: (n, d, m),
    "Ft": lambda d, m, n: (n, d, m),
    "Q": lambda d, m, n: (d, d),
    "Qt": lambda d, m, n: (d, d),
    "N": lambda d, m, n: (m, m),
    "Nt": lambda d, m, n: (m, m),
    "I": lambda d, m, n: (m, d),
    "It": lambda d, m, n: (m, d),
}

_CHANNEL_FIELDS = {
    "beta": lambda d, m, n: (d,),
    "gamma": lambda d, m, n: (n, d),
    "M": lambda d, m, n: (d,),
    "H": lambda d, m, n: (m,),
    "L": lambda d, m, n: (d,),
}


@dataclass(frozen=True)
class LqmkvProblem:
    """A linear-quadratic McKean-Vlasov control problem.

    Use :meth:`create` rather than the raw constructor; it fills omitted
    coefficients with zeros and wraps arrays into paths.  ``horizon=None``
    selects the discounted infinite-horizon formulation, which requires
    time-constant coefficients.
    """

    d: int
    m: int
    n_noises: int
    horizon: float | None
    rho: float
    B: TimePath
    Bt: TimePath
    C: TimePath
    Ct: TimePath
    D: TimePath
    Dt: TimePath
    F: TimePath
    Ft: TimePath
    Q: TimePath
    Qt: TimePath
    N: TimePath
    Nt: TimePath
    I: TimePath
    It: TimePath
    beta: AffineChannel
    gamma: AffineChannel
    M: AffineChannel
    H: AffineChannel
    L: AffineChannel
    P: np.ndarray
    Pt: np.ndarray
    x0_mean: np.ndarray
    x0_cov: np.ndarray
    factor: FactorModel | None = None
    name: str = field(default="", compare=False)

    @classmethod
    def create(cls, d, m, n_noises=1, horizon=None, rho=0.0, factor=None,
               x0_mean=0.0, x0_cov=0.0, P=0.0, Pt=0.0, name="", **coefficients):
        unknown = set(coefficients) - set(_MATRIX_FIELDS) - set(_CHANNEL_FIELDS)
        if unknown:
            raise DomainError(f"unknown coefficients: {sorted(unknown)}")
        kw = {}
        for key, shape in _MATRIX_FIELDS.items():
            kw[key] = TimePath(coefficients.get(key, 0.0), shape(d, m, n_noises))
        for key, shape in _CHANNEL_FIELDS.items():
            kw[key] = AffineChannel.of(coefficients.get(key), shape(d, m, n_noises))
        return cls(
            d=d, m=m, n_noises=n_noises,
            horizon=None if horizon is None else float(horizon),
            rho=float(rho),
            P=np.broadcast_to(np.asarray(P, dtype=float), (d, d)).copy(),
            Pt=np.broadcast_to(np.asarray(Pt, dtype=float), (d, d)).copy(),
            x0_mean=np.broadcast_to(np.asarray(x0_mean, dtype=float), (d,)).copy(),
            x0_cov=np.broadcast_to(np.asarray(x0_cov, dtype=float), (d, d)).copy(),
            factor=factor, name=name, **kw,
        )

    def __post_init__(self):
        d, m, n = self.d, self.m, self.n_noises
        if min(d, m) < 1 or n < 0:
            raise DomainError("dimensions must be positive")
        for key, shape in _MATRIX_FIELDS.items():
            if getattr(self, key).shape != shape(d, m, n):
                raise DomainError(f"{key} has shape {getattr(self, key).shape}, expected {shape(d, m, n)}")
        for key, shape in _CHANNEL_FIELDS.items():
            ch = getattr(self, key)
            if ch.shape != shape(d, m, n):
                raise DomainError(f"{key} has shape {ch.shape}, expected {shape(d, m, n)}")
            if ch.loading is not None:
                if self.factor is None:
                    raise DomainError(f"{key} loads a factor but no factor model is given")
                if ch.loading.shape[-1] != self.factor.dim:
                    raise DomainError(f"{key} loading width does not match the factor dimension")
        if self.horizon is not None and not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if self.horizon is None:
            if not self.rho > 0:
                raise DomainError("the infinite-horizon problem needs a positive discount rate")
            for key in _MATRIX_FIELDS:
                if not getattr(self, key).is_constant:
                    raise DomainError(f"infinite horizon needs time-constant {key}")
            for key in _CHANNEL_FIELDS:
                if not getattr(self, key).is_constant:
                    raise DomainError(f"infinite horizon needs time-constant {key} coefficients")
        if not np.all(np.isfinite(self.x0_cov)) or not np.all(np.isfinite(self.x0_mean)):
            raise DomainError("initial law must be finite")

    @property
    def is_finite(self):
        return self.horizon is not None

    @property
    def factor_dim(self):
        return 0 if self.factor is None else self.factor.dim

    @property
    def channels(self):
        return {key: getattr(self, key) for key in _CHANNEL_FIELDS}

    @property
    def has_random_coefficients(self):
        return any(ch.is_random for ch in self.channels.values())

    def replace(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        d, m, n = kw["d"], kw["m"], kw["n_noises"]
        for key, value in changes.items():
            if key in _MATRIX_FIELDS:
                value = TimePath(value, _MATRIX_FIELDS[key](d, m, n))
            elif key in _CHANNEL_FIELDS:
                value = AffineChannel.of(value, _CHANNEL_FIELDS[key](d, m, n))
            kw[key] = value
        return LqmkvProblem(**kw)

    def describe(self):
        """Plain dictionary of the constant data, used for hashing outputs."""
        out = {"d": self.d, "m": self.m, "n_noises": self.n_noises,
               "horizon": self.horizon, "rho": self.rho, "name": self.name}
        for key in _MATRIX_FIELDS:
            p = getattr(self, key)
            out[key] = p(0.0).tolist() if p.is_constant else repr(p)
        for key in _CHANNEL_FIELDS:
            ch = getattr(self, key)
            out[key] = {"intercept": ch.intercept(0.0).tolist() if ch.intercept.is_constant else repr(ch.intercept),
                        "loading": None if ch.loading is None else
                        (ch.loading(0.0).tolist() if ch.loading.is_constant else repr(ch.loading))}
        out["P"], out["Pt"] = self.P.tolist(), self.Pt.tolist()
        out["x0_mean"], out["x0_cov"] = self.x0_mean.tolist(), self.x0_cov.tolist()
        out["factor"] = None if self.factor is None else self.factor.to_dict()
        return out


@dataclass(frozen=True)
class HatCoefficients:
    """Plain-plus-mean-field coefficients at one time."""

    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    N: np.ndarray
    I: np.ndarray
    P: np.ndarray


def hat_coefficients(problem, t=0.0):
    p = problem
    return HatCoefficients(
        B=p.B(t) + p.Bt(t), C=p.C(t) + p.Ct(t), D=p.D(t) + p.Dt(t), F=p.F(t) + p.Ft(t),
        Q=p.Q(t) + p.Qt(t), N=p.N(t) + p.Nt(t), I=p.I(t) + p.It(t), P=p.P + p.Pt,
    )


class CoefficientSamples:
    """Deterministic coefficients and their hats stacked on a time grid."""

    def __init__(self, problem, times):
        self.times = np.asarray(times, dtype=float)
        for key in _MATRIX_FIELDS:
            setattr(self, key, getattr(problem, key).sample(self.times))
        self.Bh = self.B + self.Bt
        self.Ch = self.C + self.Ct
        self.Dh = self.D + self.Dt
        self.Fh = self.F + self.Ft
        self.Qh = self.Q + self.Qt
        self.Nh = self.N + self.Nt
        self.Ih = self.I + self.It


# ---------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class Verdict:
    status: str  # "pass", "fail", "pending" or "n/a"
    witness: float | None = None
    detail: str = ""

    @property
    def ok(self):
        return self.status == "pass"

    def to_dict(self):
        return {"status": self.status, "witness": self.witness, "detail": self.detail}


@dataclass(frozen=True)
class AssumptionReport:
    """Per-condition verdicts plus the first route that passes in full.

    ``solve_anyway`` flags the case where the structural conditions hold but
    the positivity conditions do not; the Riccati solve may still succeed and
    is then checked a posteriori.
    """

    mode: str
    verdicts: dict
    route: str | None
    overall_admissible: bool
    solve_anyway: bool

    def to_dict(self):
        return {
            "mode": self.mode,
            "route": self.route,
            "overall_admissible": self.overall_admissible,
            "solve_anyway": self.solve_anyway,
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
        }


def _min_eig(a):
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    return float(np.min(np.linalg.eigvalsh(a)))


def _opnorm(a):
    return float(np.linalg.norm(a, 2))


def _is_nonpositive(a, tol=1e-12):
    return float(np.max(np.linalg.eigvalsh(0.5 * (a + a.T)))) <= tol


def _finite_check(name, arr):
    if np.all(np.isfinite(arr)):
        return Verdict("pass", float(np.max(np.abs(arr))) if arr.size else 0.0, f"{name} bounded on the grid")
    return Verdict("fail", None, f"{name} has non-finite values")


def _channel_integrability(problem, names, discounted):
    """Square integrability of factor-affine channels."""
    for key in names:
        ch = getattr(problem, key)
        if not ch.is_random:
            continue
        growth = problem.factor.second_moment_growth
        if discounted and not growth < problem.rho:
            return Verdict("fail", growth, f"E|{key}|^2 grows at rate {growth} >= rho")
    return Verdict("pass", None, "channels are factor-affine with integrable second moments")


def _positivity(N, Q, I, P, strict_N, time_axis=True):
    """Witnesses for N >= delta, P >= 0, Q - I' N^-1 I >= 0 along a grid."""
    n_min = min(_min_eig(n) for n in N) if time_axis else _min_eig(N)
    p_min = _min_eig(P)
    if n_min <= 0:
        return n_min, p_min, -math.inf
    Ns = N if time_axis else N[None]
    Qs = Q if time_axis else Q[None]
    Is = I if time_axis else I[None]
    schur = min(_min_eig(q - i.T @ np.linalg.solve(n, i)) for n, q, i in zip(Ns, Qs, Is))
    return n_min, p_min, schur


def _positivity_verdict(label, n_min, p_min, schur):
    ok = n_min > 0 and p_min >= NONNEG_TOL and schur >= NONNEG_TOL
    witness = min(n_min, p_min - NONNEG_TOL, schur - NONNEG_TOL)
    detail = f"{label}: min eig N={n_min:.6g}, P={p_min:.6g}, Q-I'N^-1 I={schur:.6g}"
    return Verdict("pass" if ok else "fail", float(witness), detail)


def _symmetry(problem, s):
    worst = 0.0
    for arr in (s.Q, s.Qt, s.N, s.Nt):
        worst = max(worst, float(np.max(np.abs(arr - np.swapaxes(arr, -1, -2)))))
    for arr in (problem.P, problem.Pt):
        worst = max(worst, float(np.max(np.abs(arr - arr.T))))
    return Verdict("pass" if worst <= SYMMETRY_TOL else "fail", worst, "max asymmetry of Q, Qt, N, Nt, P, Pt")


def validate_finite_horizon(problem):
    """Check the finite-horizon standing assumptions on a uniform grid."""
    if not problem.is_finite:
        raise DomainError("problem has an infinite horizon")
    times = np.linspace(0.0, problem.horizon, VALIDATION_POINTS)
    s = CoefficientSamples(problem, times)
    v = {}
    det = np.concatenate([a.reshape(a.shape[0], -1) for a in (s.B, s.Bt, s.C, s.Ct, s.D, s.Dt, s.F, s.Ft)], axis=1)
    v["H1.bounded"] = _finite_check("dynamics coefficients", det)
    v["H1.integrable"] = _channel_integrability(problem, ("beta", "gamma"), discounted=False)
    v["H2.symmetric"] = _symmetry(problem, s)
    cost = np.concatenate([a.reshape(a.shape[0], -1) for a in (s.Q, s.Qt, s.N, s.Nt, s.I, s.It)], axis=1)
    bounded = _finite_check("cost coefficients", cost)
    integ = _channel_integrability(problem, ("M", "H", "L"), discounted=False)
    v["H2.integrable"] = bounded if not bounded.ok else integ
    v["H2.positive"] = _positivity_verdict("plain", *_positivity(s.N, s.Q, s.I, problem.P, True))
    Ph = problem.P + problem.Pt
    v["H2.positive_hat"] = _positivity_verdict("hat", *_positivity(s.Nh, s.Qh, s.Ih, Ph, True))

    # alternative positivity through the noise loading of the control
    scalar = problem.d == 1 and problem.m == 1
    if scalar:
        f2 = np.sum(s.F[:, :, 0, 0] ** 2, axis=1)
        fh2 = np.sum(s.Fh[:, :, 0, 0] ** 2, axis=1)
        alt = (np.all(s.N == 0) and np.all(s.I == 0) and problem.P[0, 0] > 0 and np.min(f2) > 0
               and np.min(s.Q) >= NONNEG_TOL)
        v["H2.positive_alt"] = Verdict("pass" if alt else "fail", float(np.min(f2)),
                                       "N=I=0, P>0, Q>=0 and F bounded away from zero")
        alt_h = (np.min(s.Nh) >= NONNEG_TOL and np.min(s.Qh) >= NONNEG_TOL and Ph[0, 0] > 0
                 and problem.P[0, 0] > 0 and np.all(s.Ih == 0) and np.min(fh2) > 0)
        v["H2.positive_hat_alt"] = Verdict("pass" if alt_h else "fail", float(np.min(fh2)),
                                           "hat N, Q >= 0, P > 0, hat I=0 and hat F bounded away from zero")
    else:
        v["H2.positive_alt"] = Verdict("n/a", None, "only for scalar state and control")
        v["H2.positive_hat_alt"] = Verdict("n/a", None, "only for scalar state and control")

    structural = all(v[k].ok for k in ("H1.bounded", "H1.integrable", "H2.symmetric", "H2.integrable"))
    route = None
    if structural:
        for plain in ("H2.positive", "H2.positive_alt"):
            for hat in ("H2.positive_hat", "H2.positive_hat_alt"):
                if v[plain].ok and v[hat].ok:
                    route = f"{plain}+{hat}"
                    break
            if route:
                break
    return AssumptionReport("finite", v, route, route is not None, structural and route is None)


def validate_infinite_horizon(problem, feedback=None):
    """Check the infinite-horizon assumptions.

    The conditions on the optimal closed-loop coefficients need the solved
    gains; pass a FeedbackLaw as ``feedback`` to evaluate them, otherwise
    they are reported as pending.
    """
    if problem.is_finite:
        raise DomainError("problem has a finite horizon")
    p, rho = problem, problem.rho
    s = CoefficientSamples(problem, np.zeros(1))
    B, Bt, C, Ct = s.B[0], s.Bt[0], s.C[0], s.Ct[0]
    D, Dt, F, Ft = s.D[0], s.Dt[0], s.F[0], s.Ft[0]
    v = {}
    v["H1.constant"] = Verdict("pass", None, "coefficients are time-constant")
    v["H1.integrable"] = _channel_integrability(p, ("beta", "gamma"), discounted=True)
    v["H2.symmetric"] = _symmetry(p, s)
    v["H2.integrable"] = _channel_integrability(p, ("M", "H"), discounted=True)
    v["H2.positive"] = _positivity_verdict("plain", *_positivity(s.N[0], s.Q[0], s.I[0], np.zeros((p.d, p.d)),
                                                                 True, time_axis=False))
    v["H2.positive_hat"] = _positivity_verdict("hat", *_positivity(s.Nh[0], s.Qh[0], s.Ih[0], np.zeros((p.d, p.d)),
                                                                   True, time_axis=False))

    d2 = sum(_opnorm(Di) ** 2 for Di in D)
    dt2 = sum(_opnorm(Di) ** 2 for Di in Dt)
    bound = 2 * (_opnorm(B) + _opnorm(Bt) + d2 + dt2)
    v["H3"] = Verdict("pass" if rho > bound else "fail", rho - bound, f"rho > {bound:.6g}")
    no_gamma = not p.gamma.is_random and np.all(p.gamma.intercept(0.0) == 0)
    no_f = np.all(F == 0) and np.all(Ft == 0)
    split_noise = all(np.all(Di == 0) or np.all(Dti == 0) for Di, Dti in zip(D, Dt))
    weak = (0.0 if _is_nonpositive(B) else 2 * _opnorm(B)) + (0.0 if _is_nonpositive(Bt) else 2 * _opnorm(Bt))
    weak += d2 + dt2 if (no_gamma and no_f and split_noise) else 2 * (d2 + dt2)
    v["H3.weak"] = Verdict("pass" if rho > weak else "fail", rho - weak, f"rho > {weak:.6g}")

    if feedback is None:
        pending = Verdict("pending", None, "needs the solved feedback law")
        v["H4"] = pending
        v["H5"] = pending
        v["H5.weak"] = pending
        v["gains.positive"] = pending
    else:
        S, Sh, U, V = feedback.S[0], feedback.Shat[0], feedback.U[0], feedback.V[0]
        s_min, sh_min = _min_eig(S), _min_eig(Sh)
        v["gains.positive"] = Verdict("pass" if min(s_min, sh_min) > 0 else "fail", min(s_min, sh_min),
                                      "closed-loop gain matrices are positive definite")
        G, Gh = feedback.G, feedback.Ghat
        g_min = min(np.min(np.real(np.linalg.eigvals(G))), np.min(np.real(np.linalg.eigvals(Gh)))) - rho
        v["H4"] = Verdict("pass" if g_min > 0 else "fail", float(g_min),
                          "adjoint drift exceeds the discount rate")
        Bs = B - C @ np.linalg.solve(S, U)
        Bhs = B + Bt - (C + Ct) @ np.linalg.solve(Sh, V)
        Ds = [Di - Fi @ np.linalg.solve(S, U) for Di, Fi in zip(D, F)]
        ds2 = sum(_opnorm(x) ** 2 for x in Ds)
        b5 = 2 * max(_opnorm(Bs) + ds2, _opnorm(Bhs))
        v["H5"] = Verdict("pass" if rho > b5 else "fail", rho - b5, f"rho > {b5:.6g}")
        Bts = Bhs - Bs
        weak_ok = (_is_nonpositive(Bs) and _is_nonpositive(Bts) and no_gamma and no_f and np.all(Dt == 0))
        w5 = sum(_opnorm(Di) ** 2 for Di in D)
        v["H5.weak"] = Verdict("pass" if weak_ok and rho > w5 else "fail", rho - w5 if weak_ok else None,
                               f"closed-loop drifts nonpositive and rho > {w5:.6g}")

    base = v["H1.constant"].ok and v["H1.integrable"].ok and v["H2.symmetric"].ok and v["H2.integrable"].ok
    growth = v["H3"].ok or v["H3.weak"].ok
    closed = v["H4"].ok and (v["H5"].ok or v["H5.weak"].ok)
    standard_pos = v["H2.positive"].ok and v["H2.positive_hat"].ok
    route = None
    if base and growth and closed:
        if standard_pos:
            route = "standard"
        elif v["gains.positive"].ok:
            route = "solved-gains"
        if route and not (v["H3"].ok and v["H5"].ok):
            route += "+weakened-growth"
    solve_anyway = base and growth and not standard_pos and feedback is None
    return AssumptionReport("infinite", v, route, route is not None, solve_anyway)
