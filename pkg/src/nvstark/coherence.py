"""
Dephasing of the m_I = 0 two-level transition under Ornstein-Uhlenbeck field noise.

Noise enters through the transition-frequency fluctuation

    dw(t) = R_b g_e mu_B b_z(t)/hbar + R_e d_perp e_y(t)/hbar

(linearised form; the exact square-root difference is available too).
The analytic Ramsey/echo envelopes, the closed-form T2 laws and a Monte Carlo
phase simulator all work from that single model.

Population convention: Ramsey starts at p = 0 and rises toward 1/2, the echo
starts at p = 1 and falls toward 1/2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .nvcore import CONSTANTS, NVParameters, PhysicsDomainError
from .noise import ELECTRIC_STREAM, MAGNETIC_STREAM, OUParams, ou_filter, rng_for

TWO_PI = 2.0 * math.pi
SEQUENCES = ("ramsey", "hahn_echo")


class TimeStepError(PhysicsDomainError):
    def __init__(self, msg: str, suggested_dt: float):
        super().__init__(msg)
        self.suggested_dt = suggested_dt


@dataclass(frozen=True)
class NoiseEnvironment:
    """Bias fields, both noise channels and the coupling constants.

    A channel set to None (or with sigma = 0) is absent.
    """

    B_z: float
    E_perp: float = 0.0
    magnetic: OUParams | None = None
    electric: OUParams | None = None
    params: NVParameters = field(default_factory=NVParameters)

    def __post_init__(self):
        if not (math.isfinite(self.B_z) and math.isfinite(self.E_perp)):
            raise ValueError("bias fields must be finite")
        if self.E_perp < 0:
            raise ValueError("E_perp must be >= 0")

    @property
    def omega_b_per_tesla(self) -> float:
        return self.params.g_e * CONSTANTS.mu_B / CONSTANTS.hbar

    @property
    def omega_e_per_v_per_m(self) -> float:
        return TWO_PI * self.params.d_perp_over_h

    @property
    def bias_splitting(self) -> float:
        """Half-splitting sqrt((g mu_B B_z)^2 + (d_perp E_perp)^2)/hbar in rad/s."""
        return math.hypot(self.omega_b_per_tesla * self.B_z, self.omega_e_per_v_per_m * self.E_perp)

    def in_linear_regime(self, factor: float = 10.0) -> bool:
        b = self.magnetic.sigma if self.magnetic else 0.0
        e = self.electric.sigma if self.electric else 0.0
        noise = max(self.omega_b_per_tesla * b, self.omega_e_per_v_per_m * e)
        return self.bias_splitting >= factor * noise

    def with_field(self, E_perp: float) -> NoiseEnvironment:
        return NoiseEnvironment(self.B_z, E_perp, self.magnetic, self.electric, self.params)


def sensitivity(B_z, E_perp, params: NVParameters):
    """Vectorised (R_b, R_e) for arrays of bias fields."""
    zb = params.g_e * CONSTANTS.mu_B * np.asarray(B_z, dtype=float)
    ze = CONSTANTS.h * params.d_perp_over_h * np.asarray(E_perp, dtype=float)
    norm = np.hypot(zb, ze)
    if np.any(norm == 0):
        raise PhysicsDomainError("sensitivity factors undefined for B_z = E_perp = 0")
    return zb / norm, ze / norm


def sensitivity_factors(env: NoiseEnvironment) -> tuple[float, float]:
    rb, re = sensitivity(env.B_z, env.E_perp, env.params)
    return float(rb), float(re)


def delta_omega(b, e, env: NoiseEnvironment, mode: str = "linearized"):
    """Transition-frequency shift (rad/s) for field fluctuations b (T) and e (V/m)."""
    wb = env.omega_b_per_tesla
    we = env.omega_e_per_v_per_m
    if mode == "linearized":
        rb, re = sensitivity_factors(env)
        return rb * wb * np.asarray(b) + re * we * np.asarray(e)
    if mode == "exact":
        bias = env.bias_splitting
        return np.hypot(wb * (env.B_z + np.asarray(b)), we * (env.E_perp + np.asarray(e))) - bias
    raise ValueError(f"unknown mode {mode!r}")


def _channels(env: NoiseEnvironment) -> list[tuple[str, float, float]]:
    """Active channels as (name, rate = R * omega_sigma in rad/s, tau_c)."""
    out = []
    if (env.magnetic and env.magnetic.sigma > 0) or (env.electric and env.electric.sigma > 0):
        rb, re = sensitivity_factors(env)
    if env.magnetic and env.magnetic.sigma > 0:
        out.append(("magnetic", abs(rb) * env.omega_b_per_tesla * env.magnetic.sigma, env.magnetic.tau_c))
    if env.electric and env.electric.sigma > 0:
        out.append(("electric", abs(re) * env.omega_e_per_v_per_m * env.electric.sigma, env.electric.tau_c))
    return [c for c in out if c[1] > 0]


# -- T2 laws ---------------------------------------------------------------


def t2_fid_from_rate(rate):
    """sqrt(2)/rate; inf where the rate vanishes."""
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(rate > 0, math.sqrt(2.0) / np.where(rate > 0, rate, 1.0), np.inf)


def t2_echo_from_rate(rate, tau_c):
    """(12 tau_c / rate^2)^(1/3); inf where the rate vanishes."""
    rate = np.asarray(rate, dtype=float)
    safe = np.where(rate > 0, rate, 1.0)
    return np.where(rate > 0, np.cbrt(12.0 * np.asarray(tau_c) / safe**2), np.inf)


def combine_echo(t_b, t_e):
    """T_b T_e / (T_b^3 + T_e^3)^(1/3), treating an infinite partner as absent."""
    t_b = np.asarray(t_b, dtype=float)
    t_e = np.asarray(t_e, dtype=float)
    both = np.isfinite(t_b) & np.isfinite(t_e)
    tb = np.where(both, t_b, 1.0)
    te = np.where(both, t_e, 1.0)
    prod = tb * te / np.cbrt(tb**3 + te**3)
    return np.where(both, prod, np.minimum(t_b, t_e))


def _rate(env: NoiseEnvironment, name: str) -> float:
    for n, rate, _ in _channels(env):
        if n == name:
            return rate
    return 0.0


def t2_fid_magnetic(env: NoiseEnvironment) -> float:
    return float(t2_fid_from_rate(_rate(env, "magnetic")))


def t2_echo_magnetic(env: NoiseEnvironment) -> float:
    rate = _rate(env, "magnetic")
    return float(t2_echo_from_rate(rate, env.magnetic.tau_c)) if rate > 0 else math.inf


def t2_echo_electric(env: NoiseEnvironment) -> float:
    rate = _rate(env, "electric")
    return float(t2_echo_from_rate(rate, env.electric.tau_c)) if rate > 0 else math.inf


def t2_fid_combined(env: NoiseEnvironment) -> float:
    return float(t2_fid_from_rate(math.hypot(_rate(env, "magnetic"), _rate(env, "electric"))))


def t2_echo_combined(env: NoiseEnvironment) -> float:
    return float(combine_echo(t2_echo_magnetic(env), t2_echo_electric(env)))


# -- analytic envelopes ----------------------------------------------------

_FID_SERIES = np.array([(-1.0) ** n / math.factorial(n) for n in range(2, 24)])
_ECHO_SERIES = np.array([(-1.0) ** n * (4.0 - 2.0**n) / math.factorial(n) for n in range(3, 28)])
_SERIES_CUTOFF = 0.5


def _poly(u, coeffs, first_power):
    acc = np.zeros_like(u)
    for c in coeffs[::-1]:
        acc = acc * u + c
    return acc * u**first_power


def fid_shape(u):
    """u - 1 + exp(-u), accurate down to u -> 0."""
    u = np.asarray(u, dtype=float)
    small = u < _SERIES_CUTOFF
    direct = u + np.expm1(-np.where(small, 1.0, u))
    return np.where(small, _poly(np.where(small, u, 0.0), _FID_SERIES, 2), direct)


def echo_shape(u):
    """2u - 3 - exp(-2u) + 4 exp(-u) with u = tau/tau_c (tau = half the echo time)."""
    u = np.asarray(u, dtype=float)
    small = u < _SERIES_CUTOFF
    ul = np.where(small, 1.0, u)
    direct = 2 * ul + 4 * np.expm1(-ul) - np.expm1(-2 * ul)
    return np.where(small, _poly(np.where(small, u, 0.0), _ECHO_SERIES, 3), direct)


def fid_exponent(tau, rate: float, tau_c: float):
    """chi(tau) = tau_c^2 rate^2 (tau/tau_c - 1 + e^{-tau/tau_c})."""
    return tau_c**2 * rate**2 * fid_shape(np.asarray(tau, dtype=float) / tau_c)


def echo_exponent(two_tau, rate: float, tau_c: float):
    return tau_c**2 * rate**2 * echo_shape(0.5 * np.asarray(two_tau, dtype=float) / tau_c)


def fid_exponent_slow(tau, rate: float):
    """Quasi-static (Gaussian) limit rate^2 tau^2 / 2."""
    return 0.5 * rate**2 * np.asarray(tau, dtype=float) ** 2


def fid_exponent_fast(tau, rate: float, tau_c: float):
    """Motional-narrowing limit rate^2 tau_c tau."""
    return rate**2 * tau_c * np.asarray(tau, dtype=float)


def echo_exponent_slow(two_tau, rate: float, tau_c: float):
    """rate^2 (2 tau)^3 / (12 tau_c)."""
    return rate**2 * np.asarray(two_tau, dtype=float) ** 3 / (12.0 * tau_c)


def fid_envelope_analytic(tau, env: NoiseEnvironment):
    chi = sum((fid_exponent(tau, rate, tc) for _, rate, tc in _channels(env)), np.zeros_like(np.asarray(tau, float)))
    return 0.5 - 0.5 * np.exp(-chi)


def echo_envelope_analytic(two_tau, env: NoiseEnvironment):
    t = np.asarray(two_tau, float)
    chi = sum((echo_exponent(t, rate, tc) for _, rate, tc in _channels(env)), np.zeros_like(t))
    return 0.5 + 0.5 * np.exp(-chi)


# -- Monte Carlo -----------------------------------------------------------


@dataclass(frozen=True)
class DecayCurve:
    """Population of m_s = 0 versus time (tau for Ramsey, total time 2 tau for echo)."""

    sequence_kind: str
    times: np.ndarray
    population: np.ndarray
    mc_std_error: np.ndarray
    n_realizations: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.sequence_kind not in SEQUENCES:
            raise ValueError(f"sequence_kind must be one of {SEQUENCES}")
        if self.times.shape != self.population.shape or self.times.shape != self.mc_std_error.shape:
            raise ValueError("times, population and mc_std_error must have equal shapes")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any((self.population < -1e-12) | (self.population > 1 + 1e-12)):
            raise ValueError("population outside [0, 1]")


def analytic_curve(kind: str, times, env: NoiseEnvironment) -> DecayCurve:
    t = np.asarray(times, dtype=float)
    pop = fid_envelope_analytic(t, env) if kind == "ramsey" else echo_envelope_analytic(t, env)
    return DecayCurve(kind, t, pop, np.zeros_like(t))


def max_time_step(env: NoiseEnvironment, t_max: float) -> float:
    """Largest dt allowed: min(tau_c/100, t_max/1000, 0.1/max|dw| at 5 sigma)."""
    limits = [t_max / 1000.0] if t_max > 0 else []
    peak = 0.0
    for _, rate, tc in _channels(env):
        limits.append(tc / 100.0)
        peak += 5.0 * rate
    if peak > 0:
        limits.append(0.1 / peak)
    return min(limits) if limits else math.inf


def _block_cosines(kind, times, env, seed, realizations, n_steps, dt, mode):
    n_nodes = n_steps + 1
    fields = {}
    for name, stream, ch in (("b", MAGNETIC_STREAM, env.magnetic), ("e", ELECTRIC_STREAM, env.electric)):
        if ch is None or ch.sigma == 0:
            fields[name] = 0.0
            continue
        xi = np.stack([rng_for(seed, stream, r).standard_normal(n_nodes) for r in realizations])
        fields[name] = ou_filter(xi, ch, dt)
    dw = delta_omega(fields["b"], fields["e"], env, mode)
    dw = np.broadcast_to(dw, (len(realizations), n_nodes))
    # cumulative phase on the node grid, midpoint value per step
    phase = np.zeros((len(realizations), n_nodes))
    np.cumsum(0.5 * dt * (dw[:, :-1] + dw[:, 1:]), axis=1, out=phase[:, 1:])

    def at(t):
        pos = np.clip(t / dt, 0.0, n_steps)
        i = np.minimum(np.floor(pos).astype(int), n_steps - 1)
        f = pos - i
        return phase[:, i] * (1.0 - f) + phase[:, i + 1] * f

    if kind == "ramsey":
        phi = at(times)
    else:
        phi = 2.0 * at(0.5 * times) - at(times)
    return np.cos(phi)


def simulate_sequence_mc(
    kind: str,
    times,
    env: NoiseEnvironment,
    n_realizations: int,
    seed: int,
    *,
    dt: float | None = None,
    mode: str = "linearized",
    workers: int = 1,
    block_size: int = 256,
) -> DecayCurve:
    """Monte Carlo Ramsey / Hahn-echo populations with perfect instantaneous pulses.

    ``times`` are free-evolution times tau for Ramsey and total times 2 tau
    for the echo. Each realization r draws its noise from its own
    counter-based stream, so the result does not depend on ``workers`` or
    ``block_size``.
    """
    if kind not in SEQUENCES:
        raise ValueError(f"kind must be one of {SEQUENCES}")
    if n_realizations < 100:
        raise ValueError("n_realizations must be >= 100")
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("times must be a non-empty, strictly increasing, non-negative grid")
    t_max = float(t[-1])
    limit = max_time_step(env, t_max)
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12):
        raise TimeStepError(f"dt = {dt:.3e} s violates the resolution rule; use dt <= {limit:.3e} s", limit)

    if not _channels(env) or t_max == 0.0:
        ones = np.ones_like(t)
        pop = 0.5 - 0.5 * ones if kind == "ramsey" else 0.5 + 0.5 * ones
        return DecayCurve(kind, t, pop, np.zeros_like(t), n_realizations, seed)

    n_steps = max(1, math.ceil(t_max / dt - 1e-9))
    dt = t_max / n_steps
    blocks = [range(s, min(s + block_size, n_realizations)) for s in range(0, n_realizations, block_size)]
    cos_phi = np.empty((n_realizations, t.size))

    def run(rs):
        cos_phi[rs.start : rs.stop] = _block_cosines(kind, t, env, seed, rs, n_steps, dt, mode)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    else:
        for rs in blocks:
            run(rs)

    mean = cos_phi.mean(axis=0)
    err = cos_phi.std(axis=0, ddof=1) / (2.0 * math.sqrt(n_realizations))
    pop = 0.5 - 0.5 * mean if kind == "ramsey" else 0.5 + 0.5 * mean
    return DecayCurve(kind, t, pop, err, n_realizations, seed)
