"""Gaussian-process regression with time-decayed squared-exponential kernels.

The decayed training covariance is ``K o D o TD`` where ``D`` attenuates by
index distance within the time-ordered dataset and ``TD`` by sample age;
queries are treated as a fresh sample appended at the end of the dataset.
With ``epsilon = 0`` and a decay that is identically one this reduces to
ordinary GP regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import expit

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-12
JITTER_MAX = 1e-6


class FactorizationError(RuntimeError):
    """Raised when the regularized covariance cannot be factorized."""

    def __init__(self, jitter: float):
        super().__init__(f"covariance not positive definite after jitter {jitter:.3g}")
        self.jitter = jitter


@dataclass(frozen=True)
class Sample:
    """One timestamped scalar measurement.

    ``value`` holds the raw sensor reading; models normalize at training time.
    """

    location: tuple[float, float]
    value: float
    timestamp: float
    source: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))
        if not math.isfinite(self.value):
            raise ValueError("sample value must be finite")
        if not (self.timestamp >= 0 and math.isfinite(self.timestamp)):
            raise ValueError("sample timestamp must be finite and non-negative")

    @property
    def key(self) -> tuple[int, int, int, int]:
        """Deduplication key: location to 1e-6 m, time to 1e-3 s, source."""
        x, y = self.location
        return (round(x * 1e6), round(y * 1e6), round(self.timestamp * 1e3), self.source)


Dataset = tuple  # tuple[Sample, ...] sorted by ``sample_order``


def sample_order(s: Sample):
    return (s.timestamp, s.source, s.location)


def sort_samples(samples: Iterable[Sample]) -> tuple[Sample, ...]:
    return tuple(sorted(samples, key=sample_order))


def as_arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(samples) == 0:
        return np.empty((0, 2)), np.empty(0), np.empty(0)
    X = np.array([s.location for s in samples], dtype=float)
    y = np.array([s.value for s in samples], dtype=float)
    t = np.array([s.timestamp for s in samples], dtype=float)
    return X, y, t


@dataclass(frozen=True)
class Hyperparams:
    length_scale: float
    signal_std: float
    noise_std: float

    def __post_init__(self) -> None:
        for name in ("length_scale", "signal_std", "noise_std"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def to_log(self) -> np.ndarray:
        return np.log([self.length_scale, self.signal_std, self.noise_std])

    @classmethod
    def from_log(cls, theta) -> "Hyperparams":
        lam, sf, sn = np.exp(np.asarray(theta, dtype=float))
        return cls(float(lam), float(sf), float(sn))


@dataclass(frozen=True)
class HyperparamBounds:
    length_scale: tuple[float, float]
    signal_std: tuple[float, float] = (1e-3, 10.0)
    noise_std: tuple[float, float] = (1e-4, 1.0)

    @classmethod
    def for_diameter(cls, diameter: float) -> "HyperparamBounds":
        return cls(length_scale=(0.02 * diameter, diameter))

    def log_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.log([self.length_scale[0], self.signal_std[0], self.noise_std[0]])
        hi = np.log([self.length_scale[1], self.signal_std[1], self.noise_std[1]])
        return lo, hi

    def clip(self, hp: Hyperparams) -> Hyperparams:
        lo, hi = self.log_box()
        return Hyperparams.from_log(np.clip(hp.to_log(), lo, hi))


@dataclass(frozen=True)
class DecayParams:
    """Spatial-forgetting factor ``epsilon`` and the age decay shape.

    ``kind`` is ``"exponential"`` (``exp(-dt / tau)``) or ``"step"``
    (a falling sigmoid of steepness ``steepness`` centred at ``step_time``).
    """

    epsilon: float = 0.0
    tau: float = math.inf
    kind: str = "exponential"
    steepness: float = 1.0
    step_time: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.kind not in ("exponential", "step"):
            raise ValueError(f"unknown decay kind {self.kind!r}")
        if self.kind == "step" and not (self.steepness > 0 and self.step_time >= 0):
            raise ValueError("step decay needs steepness > 0 and step_time >= 0")

    @classmethod
    def identity(cls) -> "DecayParams":
        return cls()


def se_kernel(x, x2, hp: Hyperparams) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)
    return hp.signal_std**2 * math.exp(-float(d @ d) / (2.0 * hp.length_scale**2))


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return cdist(A, B, "sqeuclidean")


def kernel_matrix(A: np.ndarray, B: np.ndarray, hp: Hyperparams) -> np.ndarray:
    return hp.signal_std**2 * np.exp(-sq_dists(A, B) / (2.0 * hp.length_scale**2))


def time_decay(dt, dp: DecayParams):
    """Age attenuation in ``(0, 1]`` for sample ages ``dt`` (seconds)."""
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("sample age must be non-negative")
    if dp.kind == "exponential":
        out = np.exp(-dt / dp.tau)
    else:
        out = expit(-dp.steepness * (dt - dp.step_time))
    return float(out) if out.ndim == 0 else out


def decay_matrices(timestamps, now: float, dp: DecayParams):
    """Return ``(D, d, Td, TD)`` for a time-ordered dataset evaluated at ``now``."""
    t = np.asarray(timestamps, dtype=float)
    n = len(t)
    if n > 1 and np.any(np.diff(t) < 0):
        raise ValueError("timestamps must be sorted ascending")
    if n and now < t[-1]:
        raise ValueError("evaluation time precedes the newest sample")
    half_log = 0.5 * math.log1p(-dp.epsilon)
    idx = np.arange(n)
    D = np.exp(np.abs(idx[:, None] - idx[None, :]) * half_log)
    d = np.exp((n - idx) * half_log)
    Td = np.atleast_1d(time_decay(now - t, dp)) if n else np.empty(0)
    TD = np.outer(Td, Td)
    np.fill_diagonal(TD, 1.0)
    return D, d, Td, TD


def _factorize(K: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter x10 on failure."""
    eye = np.eye(len(K))
    jitter = 0.0
    steps = int(round(math.log10(JITTER_MAX / JITTER_START)))
    for jitter in [0.0] + [JITTER_START * scale * 10.0**k for k in range(steps + 1)]:
        try:
            return cholesky(K + jitter * eye if jitter else K, lower=True, check_finite=False), jitter
        except LinAlgError:
            continue
    raise FactorizationError(jitter)


class GpPosterior:
    """Immutable posterior over a time-ordered training set.

    Training targets ``y`` are expected in normalized units (prior mean 0).
    """

    def __init__(self, X, y, timestamps, hp: Hyperparams, dp: DecayParams, now: float):
        self.X = np.asarray(X, dtype=float).reshape(-1, 2)
        self.y = np.asarray(y, dtype=float)
        self.t = np.asarray(timestamps, dtype=float)
        self.hp, self.dp, self.now = hp, dp, float(now)
        self.n = len(self.X)
        self.jitter = 0.0
        if self.n == 0:
            self._w = np.empty(0)
            return
        D, d, Td, TD = decay_matrices(self.t, self.now, dp)
        self._M = D * TD
        self._w = d * Td
        K = kernel_matrix(self.X, self.X, hp) * self._M
        K[np.diag_indices_from(K)] += hp.noise_std**2
        self.L, self.jitter = _factorize(K, hp.signal_std**2)
        self.alpha = cho_solve((self.L, True), self.y, check_finite=False)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], hp, dp, now, values=None) -> "GpPosterior":
        X, y, t = as_arrays(samples)
        if values is not None:
            y = np.asarray(values, dtype=float)
        return cls(X, y, t, hp, dp, now)

    def cross(self, Q: np.ndarray) -> np.ndarray:
        return kernel_matrix(Q, self.X, self.hp) * self._w

    def mean(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        if self.n == 0:
            return np.zeros(len(Q))
        return self.cross(Q) @ self.alpha

    def predict(self, Q) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and variances at query points."""
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        prior = self.hp.signal_std**2
        if self.n == 0:
            return np.zeros(len(Q)), np.full(len(Q), prior)
        ks = self.cross(Q)
        mu = ks @ self.alpha
        v = solve_triangular(self.L, ks.T, lower=True, check_finite=False)
        var = prior - np.einsum("ij,ij->j", v, v)
        return mu, np.clip(var, 0.0, prior)

    def std(self, Q) -> np.ndarray:
        return np.sqrt(self.predict(Q)[1])


def posterior(train: Sequence[Sample], hp: Hyperparams, dp: DecayParams, now: float, queries, values=None):
    """Means and variances at ``queries`` given a time-ordered dataset."""
    return GpPosterior.from_samples(train, hp, dp, now, values).predict(queries)


def _fit_geometry(X, t, dp: DecayParams, now: float) -> tuple[np.ndarray, np.ndarray]:
    """Hyperparameter-independent pieces: squared distances and decay mask."""
    D, _, _, TD = decay_matrices(t, now, dp)
    return sq_dists(X, X), D * TD


def _lml_terms(r2, M, y, theta, want_grad: bool):
    hp = Hyperparams.from_log(theta)
    E = np.exp(-r2 / (2.0 * hp.length_scale**2)) * M
    Kf = hp.signal_std**2 * E
    K = Kf.copy()
    K[np.diag_indices_from(K)] += hp.noise_std**2
    L, _ = _factorize(K, hp.signal_std**2)
    alpha = cho_solve((L, True), y, check_finite=False)
    n = len(y)
    value = -0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * n * LOG_2PI
    if not want_grad:
        return value, None
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    dK_lam = Kf * (r2 / hp.length_scale**2)
    grad = np.array(
        [
            0.5 * float(np.sum(W * dK_lam)),
            float(np.sum(W * Kf)),  # 0.5 * tr(W * 2 Kf)
            hp.noise_std**2 * float(np.trace(W)),
        ]
    )
    return value, grad


def log_marginal_likelihood(train: Sequence[Sample], hp: Hyperparams, dp: DecayParams, now: float, values=None):
    """Log evidence and its gradient w.r.t. ``log(length, signal_std, noise_std)``."""
    X, y, t = as_arrays(train)
    if values is not None:
        y = np.asarray(values, dtype=float)
    if len(y) == 0:
        raise ValueError("log marginal likelihood needs at least one sample")
    r2, M = _fit_geometry(X, t, dp, now)
    return _lml_terms(r2, M, y, hp.to_log(), True)


def optimize_hyperparams(
    train: Sequence[Sample],
    start: Hyperparams,
    dp: DecayParams,
    now: float,
    bounds: HyperparamBounds,
    budget: int = 100,
    values=None,
    tol: float = 1e-5,
) -> Hyperparams:
    """Projected gradient ascent on the log evidence in log-parameter space.

    Runs from ``start`` and from the log-midpoint of ``bounds``; returns
    the best point found, never one with lower evidence than ``start``.
    """
    X, y, t = as_arrays(train)
    if values is not None:
        y = np.asarray(values, dtype=float)
    if len(y) < 2 or budget <= 0:
        return start
    lo, hi = bounds.log_box()
    r2, M = _fit_geometry(X, t, dp, now)
    evals = 0

    def f(theta, grad=True):
        nonlocal evals
        evals += 1
        return _lml_terms(r2, M, y, theta, grad)

    def proj_grad(theta, g):
        g = g.copy()
        g[(theta <= lo) & (g < 0)] = 0.0
        g[(theta >= hi) & (g > 0)] = 0.0
        return g

    theta0 = start.to_log()
    try:
        v0, g0 = f(theta0)
    except FactorizationError:
        return start
    if np.linalg.norm(proj_grad(np.clip(theta0, lo, hi), g0)) < tol and np.all((theta0 >= lo) & (theta0 <= hi)):
        return start
    best_theta, best_val = theta0, v0

    for init in (theta0, 0.5 * (lo + hi)):
        if evals >= budget:
            break
        theta = np.clip(init, lo, hi)
        try:
            val, g = (v0, g0) if init is theta0 and np.array_equal(theta, theta0) else f(theta)
        except FactorizationError:
            continue
        step = 1.0
        while evals < budget:
            pg = proj_grad(theta, g)
            gn = np.linalg.norm(pg)
            if gn < tol:
                break
            direction = pg / gn
            improved = False
            while evals < budget and step > 1e-8:
                cand = np.clip(theta + step * direction, lo, hi)
                try:
                    cv, cg = f(cand)
                except FactorizationError:
                    step *= 0.5
                    continue
                # Armijo condition on the projected step
                if cv >= val + 1e-4 * float(pg @ (cand - theta)):
                    theta, val, g = cand, cv, cg
                    improved = True
                    step = min(step * 2.0, 4.0)
                    break
                step *= 0.5
            if not improved:
                break
        if val > best_val:
            best_theta, best_val = theta, val

    if best_theta is theta0:
        return start
    return Hyperparams.from_log(best_theta)


@dataclass(frozen=True)
class GpModel:
    """A robot's GP configuration: current hyperparameters plus fitting policy.

    ``fit_max_points`` caps the training set used for hyperparameter fitting
    to the most recent samples; prediction always uses the full dataset.
    """

    hyperparams: Hyperparams
    decay: DecayParams
    bounds: HyperparamBounds
    budget: int = 100
    retrain_every: int = 5
    fit_max_points: int | None = 150

    def posterior(self, samples: Sequence[Sample], now: float, values=None) -> GpPosterior:
        return GpPosterior.from_samples(samples, self.hyperparams, self.decay, now, values)

    def retrain(self, samples: Sequence[Sample], now: float, values) -> "GpModel":
        values = np.asarray(values, dtype=float)
        if self.fit_max_points is not None and len(samples) > self.fit_max_points:
            samples = samples[-self.fit_max_points:]
            values = values[-self.fit_max_points:]
        hp = optimize_hyperparams(samples, self.hyperparams, self.decay, now, self.bounds, self.budget, values)
        if hp == self.hyperparams:
            return self
        return replace(self, hyperparams=hp)
