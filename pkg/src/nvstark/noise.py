"""
Stationary Ornstein-Uhlenbeck noise for the bath field b_z(t) and e_y(t).

Paths use the exact AR(1) discretisation

    x_{k+1} = a x_k + sigma sqrt(1 - a^2) xi_k,   a = exp(-dt / tau_c)

with x_0 drawn from the stationary law N(0, sigma^2), so any dt is
distribution-exact.

Random numbers come from a counter-based Philox stream keyed by
(seed, stream, realization). Any realization can be regenerated on its own,
so Monte Carlo work can be split across workers without changing results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

MAGNETIC_STREAM = 0
ELECTRIC_STREAM = 1


@dataclass(frozen=True)
class OUParams:
    sigma: float
    tau_c: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and >= 0")
        if not self.tau_c > 0:
            raise ValueError("tau_c must be > 0")

    def correlation(self, t):
        """Target autocorrelation sigma^2 exp(-|t|/tau_c)."""
        return self.sigma**2 * np.exp(-np.abs(t) / self.tau_c)


@dataclass(frozen=True)
class NoisePath:
    dt: float
    samples: np.ndarray
    seed: int
    params: OUParams

    def __post_init__(self):
        if self.samples.size < 1:
            raise ValueError("a path needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.samples.size)

    def __len__(self) -> int:
        return self.samples.size


def rng_for(seed: int, stream: int = 0, realization: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (seed, stream, realization) triple."""
    ss = np.random.SeedSequence([int(seed), int(stream), int(realization)])
    return np.random.Generator(np.random.Philox(ss))


def ou_transition(params: OUParams, dt: float) -> tuple[float, float]:
    """(decay factor a, innovation std) for one exact step of length dt."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    a = math.exp(-dt / params.tau_c)
    # -expm1(-2dt/tau) = 1 - a^2 without cancellation for dt << tau_c
    return a, params.sigma * math.sqrt(-math.expm1(-2.0 * dt / params.tau_c))


def ou_filter(xi: np.ndarray, params: OUParams, dt: float) -> np.ndarray:
    """Turn standard normals into stationary OU samples along the last axis.

    ``xi[..., 0]`` seeds the stationary initial value; the rest drive the
    recursion. Works on stacks of realizations at once.
    """
    a, s = ou_transition(params, dt)
    xi = np.asarray(xi, dtype=float)
    x0 = params.sigma * xi[..., :1]
    if xi.shape[-1] == 1:
        return x0.copy()
    zi = a * x0
    rest, _ = lfilter([s], [1.0, -a], xi[..., 1:], axis=-1, zi=zi)
    return np.concatenate([x0, rest], axis=-1)


def sample_ou_path(
    p: OUParams, dt: float, n: int, seed: int, *, stream: int = 0, realization: int = 0
) -> NoisePath:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if p.sigma == 0.0:
        return NoisePath(dt, np.zeros(n), seed, p)
    xi = rng_for(seed, stream, realization).standard_normal(n)
    return NoisePath(dt, ou_filter(xi, p, dt), seed, p)


def autocorrelation(path: NoisePath | np.ndarray, max_lag: int, dt: float | None = None):
    """Unbiased stationary autocorrelation estimate.

    C(k) = 1/(n-k) * sum_i (x_i - m)(x_{i+k} - m), with m the sample mean, so
    C(0) is the (ddof=0) sample variance. Returns (lag_times, estimates).
    """
    if isinstance(path, NoisePath):
        x, dt = path.samples, path.dt
    else:
        x = np.asarray(path, dtype=float)
        dt = 1.0 if dt is None else dt
    n = x.size
    if n == 0:
        raise ValueError("empty path")
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must be in [0, {n - 1}]")
    y = x - x.mean()
    c = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        c[k] = np.dot(y[: n - k], y[k:]) / (n - k)
    return dt * np.arange(max_lag + 1), c


def fit_correlation_time(lags: np.ndarray, c: np.ndarray) -> tuple[float, float]:
    """Least-squares line through log C(t); returns (tau_c, sigma) estimates."""
    ok = c > 0
    slope, intercept = np.polyfit(lags[ok], np.log(c[ok]), 1)
    return -1.0 / slope, math.exp(0.5 * intercept)
