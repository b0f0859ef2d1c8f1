"""
Inverse problems: ODMR line fits, B_z and d_perp extraction, decay-curve fits,
and noise parameters from T2-versus-field series.

All public fits return a :class:`FitResult` whose values are SI. Internally
each fit rescales its parameters to O(1) before handing them to the solver.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares, nnls
from scipy.signal import find_peaks

from .coherence import (
    NoiseEnvironment,
    DecayCurve,
    combine_echo,
    sensitivity,
    sensitivity_factors,
    t2_echo_from_rate,
    t2_fid_from_rate,
)
from .hamiltonian import ResonanceSet, Transition, resonance_frequencies
from .nvcore import CONSTANTS, FieldVector, NVParameters, convert_unit

XTOL = 1e-10
FTOL = 1e-12
GRAD_COSINE_TOL = 1e-4
ILL_CONDITION = 1e8


@dataclass
class FitResult:
    names: tuple[str, ...]
    values: np.ndarray
    uncertainties: np.ndarray
    covariance: np.ndarray
    rss: float
    converged: bool
    iterations: int
    n_points: int
    degenerate: bool = False
    ill_conditioned: bool = False
    condition_number: float = 1.0
    message: str = ""
    restart: int = 0
    derived: dict = field(default_factory=dict)

    @property
    def dof(self) -> int:
        return self.n_points - len(self.values)

    @property
    def reduced_rss(self) -> float:
        return self.rss / self.dof if self.dof > 0 else math.nan

    def __getitem__(self, name: str) -> float:
        if name in self.derived:
            return self.derived[name][0]
        return float(self.values[self.names.index(name)])

    def sigma(self, name: str) -> float:
        if name in self.derived:
            return self.derived[name][1]
        return float(self.uncertainties[self.names.index(name)])

    def rescaled(self, names: Sequence[str], scale, offset=None) -> FitResult:
        """Same fit expressed in new units: value -> value * scale + offset."""
        scale = np.asarray(scale, dtype=float)
        offset = np.zeros_like(scale) if offset is None else np.asarray(offset, dtype=float)
        out = FitResult(**{**self.__dict__})
        out.names = tuple(names)
        out.values = self.values * scale + offset
        out.uncertainties = self.uncertainties * np.abs(scale)
        out.covariance = self.covariance * np.outer(scale, scale)
        return out

    def report(self, fit_kind: str, seed: int | None = None, units: dict | None = None) -> dict:
        units = units or {}
        params = [
            {"name": n, "value": float(v), "sigma": float(s), **({"unit": units[n]} if n in units else {})}
            for n, v, s in zip(self.names, self.values, self.uncertainties)
        ]
        params += [
            {"name": n, "value": float(v), "sigma": float(s), **({"unit": units[n]} if n in units else {})}
            for n, (v, s) in self.derived.items()
        ]
        out = {
            "schema": 1,
            "fit_kind": fit_kind,
            "parameters": params,
            "rss": float(self.rss),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "ill_conditioned": bool(self.ill_conditioned),
        }
        if seed is not None:
            out["seed"] = seed
        return out


def _covariance(jac: np.ndarray, rss: float, n_params: int, absolute_sigma: bool):
    n = jac.shape[0]
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    smax = s[0] if s.size else 0.0
    tiny = np.finfo(float).eps * max(jac.shape) * smax
    keep = s > tiny
    degenerate = smax == 0.0 or not np.all(s > 1e-12 * smax)
    cond = smax / s[-1] if s.size and s[-1] > 0 else math.inf
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0) ** 2, 0.0)
    cov = (vt.T * inv) @ vt
    if not keep.all():
        # parameters touching an unconstrained direction get infinite variance
        loose = np.any(np.abs(vt[~keep]) > 1e-8, axis=0)
        cov[np.ix_(loose, loose)] = np.inf
    dof = n - n_params
    if not absolute_sigma and dof > 0:
        cov = cov * (rss / dof)
    return cov, degenerate, cond


def _gradient_ok(jac, resid, active_mask, data_norm: float) -> bool:
    g = jac.T @ resid
    rn = np.linalg.norm(resid)
    # residuals at roundoff level: the direction of r carries no information
    if rn <= 1e-9 * max(data_norm, np.finfo(float).tiny):
        return True
    cn = np.linalg.norm(jac, axis=0)
    free = active_mask == 0
    # at an active bound only a gradient pointing into the feasible set is a problem
    cos = np.abs(g) / np.where(cn > 0, cn * rn, 1.0)
    blocked = (active_mask < 0) & (g > 0) | (active_mask > 0) & (g < 0)
    bad = (cos > GRAD_COSINE_TOL) & (free | ~blocked)
    return not bool(np.any(bad))


def nonlinear_least_squares(
    model: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x,
    y,
    p0,
    *,
    sigma=None,
    bounds=(-np.inf, np.inf),
    jac: Callable | None = None,
    names: Sequence[str] | None = None,
    multistart: int = 0,
    seed: int = 0,
    absolute_sigma: bool = False,
    max_nfev: int | None = None,
    workers: int = 1,
) -> FitResult:
    """Weighted least squares fit of ``model(x, p)`` to ``y``.

    Parameters
    ----------
    model : callable
        ``model(x, p) -> y_model`` with ``p`` a 1-d parameter array.
    sigma : array, optional
        Per-point standard deviations. Without them the fit is unweighted.
    bounds : (lower, upper)
        Scalars or per-parameter arrays.
    jac : callable, optional
        ``jac(x, p) -> d y_model / d p`` of shape (n_points, n_params).
        Finite differences are used otherwise.
    multistart : int
        If > 1, that many starts are tried (the first is ``p0``, the rest are
        seeded perturbations of it) and the lowest-cost basin is returned.
        Ties go to the lowest start index.
    absolute_sigma : bool
        If False the covariance is scaled by rss / dof.

    Returns
    -------
    FitResult
        ``converged`` is False when the evaluation cap was hit or the
        projected gradient is not small at the returned point.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    n_par = p0.size
    if y.size < n_par:
        raise ValueError(f"need at least {n_par} points, got {y.size}")
    w = None if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    if w is not None and not np.all(np.isfinite(w)):
        raise ValueError("sigma must be finite and > 0")
    lb, ub = (np.broadcast_to(np.asarray(b, dtype=float), p0.shape) for b in bounds)
    if np.any(p0 < lb) or np.any(p0 > ub):
        raise ValueError("initial parameters outside bounds")
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n_par))

    def fun(p):
        r = model(x, p) - y
        return r if w is None else r * w

    jac_fn = "2-point"
    if jac is not None:
        def jac_fn(p):
            j = np.asarray(jac(x, p), dtype=float)
            return j if w is None else j * w[:, None]

    starts = [p0]
    if multistart > 1:
        rng = np.random.default_rng(seed)
        for _ in range(multistart - 1):
            scale = np.where(p0 != 0, np.abs(p0), 1.0)
            trial = p0 + 0.5 * scale * rng.uniform(-1, 1, n_par)
            starts.append(np.clip(trial, lb + 1e-12 * np.abs(lb), ub - 1e-12 * np.abs(ub)))

    def solve(start):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return least_squares(
                fun, start, jac=jac_fn, bounds=(lb, ub), method="trf",
                xtol=XTOL, ftol=FTOL, gtol=1e-12, x_scale="jac", max_nfev=max_nfev,
            )

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, starts))
    else:
        results = [solve(s) for s in starts]
    best = 0
    for i, r in enumerate(results):
        if r.cost < results[best].cost:
            best = i
    res = results[best]

    rss = float(2.0 * res.cost)
    cov, degenerate, cond = _covariance(res.jac, rss, n_par, absolute_sigma)
    unc = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    converged = res.status > 0 and _gradient_ok(res.jac, res.fun, res.active_mask, float(np.linalg.norm(y if w is None else y * w)))
    return FitResult(
        names=names,
        values=res.x.copy(),
        uncertainties=unc,
        covariance=cov,
        rss=rss,
        converged=bool(converged),
        iterations=int(res.nfev),
        n_points=int(y.size),
        degenerate=bool(degenerate),
        ill_conditioned=bool(degenerate or cond > ILL_CONDITION),
        condition_number=float(cond),
        message=str(res.message),
        restart=best,
    )


# -- ODMR ------------------------------------------------------------------


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray  # Hz
    contrast: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        c = np.asarray(self.contrast, dtype=float)
        if f.shape != c.shape or f.ndim != 1:
            raise ValueError("frequencies and contrast must be 1-d arrays of equal length")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "contrast", c)


@dataclass(frozen=True)
class GaussianDipModel:
    baseline: float
    centers: np.ndarray
    widths: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.widths) <= 0):
            raise ValueError("widths must be > 0")
        if np.any(np.asarray(self.depths) < 0):
            raise ValueError("depths must be >= 0")

    def __call__(self, f):
        return gaussian_dips(np.asarray(f, dtype=float), self.baseline, self.centers, self.widths, self.depths)


def gaussian_dips(f, baseline, centers, widths, depths):
    f = np.asarray(f, dtype=float)[:, None]
    g = np.exp(-((f - np.asarray(centers)) ** 2) / (2.0 * np.asarray(widths) ** 2))
    return baseline - (np.asarray(depths) * g).sum(axis=1)


class TooFewDipsError(ValueError):
    def __init__(self, found: int, wanted: int):
        super().__init__(f"detected {found} candidate dips, need {wanted}")
        self.found = found


def detect_dips(s: Spectrum, n_dips: int, window: int = 5, noise_std: float | None = None):
    """Seed positions from minima of the moving-average-smoothed contrast.

    A minimum qualifies if it lies below baseline - 3 noise and stands out of
    its surroundings by more than the smoothed noise. Returns
    (baseline, sorted indices of the ``n_dips`` most prominent minima, noise).
    """
    y = s.contrast
    smooth = uniform_filter1d(y, size=window, mode="nearest")
    if noise_std is None:
        # robust scatter from first differences
        d = np.diff(y)
        noise_std = 1.4826 * np.median(np.abs(d - np.median(d))) / math.sqrt(2.0)
    baseline = float(np.percentile(smooth, 90))
    thresh = baseline - 3.0 * noise_std
    prominence = max(2.0 * noise_std / math.sqrt(window), 1e-12)
    idx, props = find_peaks(-smooth, height=-thresh, prominence=prominence)
    if idx.size < n_dips:
        raise TooFewDipsError(int(idx.size), n_dips)
    best = np.argsort(-props["prominences"], kind="stable")[:n_dips]
    return baseline, sorted(int(i) for i in idx[best]), noise_std


def _half_depth_width(u, smooth, baseline, i, seeds) -> float:
    """Gaussian std from the narrower half-depth half-width around seed i.

    Each side stops at the midpoint to the neighbouring seed, so a blended
    partner does not inflate the estimate.
    """
    half = baseline - 0.5 * (baseline - smooth[i])
    others = [j for j in seeds if j != i]
    left_stop = max([(i + j) // 2 for j in others if j < i], default=0)
    right_stop = min([(i + j + 1) // 2 for j in others if j > i], default=u.size - 1)
    widths = []
    j = i
    while j > left_stop and smooth[j] < half:
        j -= 1
    if smooth[j] >= half:
        widths.append(u[i] - u[j])
    j = i
    while j < right_stop and smooth[j] < half:
        j += 1
    if smooth[j] >= half:
        widths.append(u[j] - u[i])
    if not widths:
        return math.inf
    # half width at half depth = sqrt(2 ln 2) sigma
    return max(min(widths) / math.sqrt(2.0 * math.log(2.0)), u[1] - u[0])


def fit_odmr_gaussians(
    s: Spectrum,
    n_dips: int = 6,
    *,
    width_seed: float | None = None,
    noise_std: float | None = None,
    sigma=None,
    center_seeds=None,
) -> tuple[GaussianDipModel, FitResult]:
    """Fit baseline minus ``n_dips`` Gaussians; returned dips are sorted by centre.

    Seeds come from local minima of the smoothed spectrum unless
    ``center_seeds`` (Hz) is given, which is the way to fit lines that have
    merged into a single minimum.
    """
    if width_seed is None:
        width_seed = abs(NVParameters().A_par_over_h) / 4.0
    f0 = float(np.mean(s.frequencies))
    fs = 1e6  # work in MHz offsets
    u = (s.frequencies - f0) / fs
    if center_seeds is None:
        baseline, idx, _ = detect_dips(s, n_dips, noise_std=noise_std)
    else:
        if len(center_seeds) != n_dips:
            raise ValueError("need one centre seed per dip")
        baseline = float(np.percentile(uniform_filter1d(s.contrast, size=5, mode="nearest"), 90))
        idx = [int(np.argmin(np.abs(s.frequencies - c))) for c in center_seeds]
    smooth = uniform_filter1d(s.contrast, size=5, mode="nearest")
    w_cap = width_seed / fs
    p0 = [baseline]
    lo, hi = [-np.inf], [np.inf]
    for i in idx:
        w0 = min(_half_depth_width(u, smooth, baseline, i, idx), w_cap)
        p0 += [u[i], w0, max(baseline - smooth[i], 1e-6)]
        lo += [u[0], 1e-4 * w_cap, 0.0]
        hi += [u[-1], (u[-1] - u[0]), np.inf]

    def model(x, p):
        c, w, d = p[1::3], p[2::3], p[3::3]
        return gaussian_dips(x, p[0], c, w, d)

    def jac(x, p):
        c, w, d = p[1::3], p[2::3], p[3::3]
        dx = x[:, None] - c
        g = np.exp(-(dx**2) / (2 * w**2))
        j = np.empty((x.size, p.size))
        j[:, 0] = 1.0
        j[:, 1::3] = -d * g * dx / w**2
        j[:, 2::3] = -d * g * dx**2 / w**3
        j[:, 3::3] = -g
        return j

    names = ["baseline"] + [f"{k}_{i}" for i in range(n_dips) for k in ("center", "width", "depth")]
    fit = nonlinear_least_squares(model, u, s.contrast, np.array(p0), sigma=sigma, bounds=(lo, hi), jac=jac, names=names)

    order = np.argsort(fit.values[1::3], kind="stable")
    perm = [0] + [1 + 3 * k + j for k in order for j in range(3)]
    vals = fit.values[perm]
    fit.values, fit.uncertainties = vals, fit.uncertainties[perm]
    fit.covariance = fit.covariance[np.ix_(perm, perm)]
    scale = np.array([1.0] + [fs, fs, 1.0] * n_dips)
    offset = np.array([0.0] + [f0, 0.0, 0.0] * n_dips)
    fit = fit.rescaled(names, scale, offset)
    v = fit.values
    return GaussianDipModel(float(v[0]), v[1::3].copy(), v[2::3].copy(), v[3::3].copy()), fit


# -- magnetic field and d_perp ---------------------------------------------


def resonance_set_from_zero_field_lines(frequencies) -> ResonanceSet:
    """Assign six sorted E = 0 line positions to (branch, m_I).

    Valid for weak axial fields (g mu_B B_z < |A_par|/2) with A_par < 0: the
    middle pair is the m_I = 0 doublet.
    """
    f = np.sort(np.asarray(frequencies, dtype=float))
    if f.size != 6:
        raise ValueError("expected six line positions")
    order = [("-", -1), ("+", 1), ("-", 0), ("+", 0), ("-", 1), ("+", -1)]
    return ResonanceSet(tuple(Transition(float(fi), b, m) for fi, (b, m) in zip(f, order)))


def estimate_bz(res: ResonanceSet, params: NVParameters = NVParameters()) -> float:
    """B_z (T) from the m_I = 0 pair at zero electric field."""
    try:
        fp, fm = res.get("+", 0), res.get("-", 0)
    except KeyError:
        raise ValueError("resonance set lacks the m_I = 0 lines") from None
    return (fp - fm) * CONSTANTS.h / (2.0 * CONSTANTS.mu_B * params.g_e)


_DPERP_UNIT = convert_unit(1.0, "kHz*cm/kV", "Hz/(V/m)")


def _model_lines(params: NVParameters, e_fields: Sequence[FieldVector], B: FieldVector) -> np.ndarray:
    return np.concatenate([resonance_frequencies(params, E, B).sorted_frequencies() for E in e_fields])


def fit_dperp(
    e_fields: Sequence[FieldVector],
    measured,
    B_z: float,
    params: NVParameters = NVParameters(),
    *,
    d0: float | None = None,
    sigma=None,
) -> tuple[float, FitResult]:
    """Fit d_perp/h (Hz per V/m) to sorted line positions measured at several fields.

    ``measured`` has one row of six frequencies (Hz) per field. B_x = B_y = 0.
    Lines are compared in sorted order, which needs no branch assignment.
    """
    meas = np.sort(np.asarray(measured, dtype=float), axis=1)
    if meas.shape != (len(e_fields), 6):
        raise ValueError("measured must have shape (n_fields, 6)")
    if len(e_fields) < 3:
        raise ValueError("need at least 3 field points")
    B = FieldVector(0.0, 0.0, B_z)
    zeeman = params.gamma_hz_per_t * B_z
    if d0 is None:
        k = int(np.argmax([E.perp() for E in e_fields]))
        half = 0.5 * (meas[k, 3] - meas[k, 2])
        e_max = e_fields[k].perp()
        d0 = math.sqrt(max(half**2 - zeeman**2, 0.0)) / e_max / _DPERP_UNIT if e_max > 0 else 0.0
        if not 1.0 < d0 < 100.0:
            d0 = 17.0
    mhz = 1e6
    centre = params.D_gs_over_h

    def model(_, p):
        trial = NVParameters(**{**params.__dict__, "d_perp_over_h": p[0] * _DPERP_UNIT})
        return (_model_lines(trial, e_fields, B) - centre) / mhz

    fit = nonlinear_least_squares(
        model, None, ((meas - centre) / mhz).ravel(), [d0],
        sigma=None if sigma is None else np.broadcast_to(np.asarray(sigma, float) / mhz, meas.shape).ravel(),
        bounds=([1e-6], [np.inf]), names=["d_perp_over_h"],
    )
    fit.derived["d_perp_over_h_khz_cm_per_kv"] = (float(fit.values[0]), float(fit.uncertainties[0]))
    fit = fit.rescaled(["d_perp_over_h"], [_DPERP_UNIT])
    return float(fit.values[0]), fit


# -- decay curves ----------------------------------------------------------


def decay_model(t, y0, amplitude, t2, power):
    return y0 + amplitude * np.exp(-((np.asarray(t, dtype=float) / t2) ** power))


def _seed_decay(t, y):
    tail = max(1, y.size // 5)
    y0 = float(np.mean(y[-tail:]))
    a = float(y[0] - y0)
    if a == 0.0:
        return y0, 1e-12, float(np.median(t[t > 0])) if np.any(t > 0) else 1.0
    frac = (y - y0) / a
    below = np.nonzero(frac < math.exp(-1))[0]
    if below.size and below[0] > 0:
        i = below[0]
        t2 = float(np.interp(math.exp(-1), [frac[i], frac[i - 1]], [t[i], t[i - 1]]))
    else:
        t2 = float(t[t > 0][len(t[t > 0]) // 2]) if np.any(t > 0) else 1.0
    return y0, a, max(t2, 1e-300)


def _fit_decay(times, values, sigma, power, name, free_power=False):
    if isinstance(times, DecayCurve):
        values = times.population if values is None else values
        times = times.times
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 5:
        warnings.warn("decay fit with fewer than 5 points", stacklevel=3)
    y0, a, t2 = _seed_decay(t, y)
    ts = t2
    ys = max(abs(a), 1e-300)
    p0 = [y0 / ys, a / ys, 1.0] + ([float(power)] if free_power else [])

    def model(x, p):
        pw = p[3] if free_power else power
        return decay_model(x / ts, p[0], p[1], p[2], pw)

    def jac(x, p):
        pw = p[3] if free_power else power
        r = x / ts / p[2]
        e = np.exp(-(r**pw))
        cols = [np.ones_like(x), e, p[1] * e * pw * r**pw / p[2]]
        if free_power:
            with np.errstate(divide="ignore", invalid="ignore"):
                lr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
            cols.append(-p[1] * e * r**pw * lr)
        return np.column_stack(cols)

    lo = [-np.inf, -np.inf, 1e-9] + ([0.1] if free_power else [])
    hi = [np.inf, np.inf, np.inf] + ([10.0] if free_power else [])
    names = ["y0", "A", name] + (["power"] if free_power else [])
    fit = nonlinear_least_squares(
        model, t, y / ys, p0, sigma=None if sigma is None else np.asarray(sigma) / ys,
        bounds=(lo, hi), jac=jac, names=names,
    )
    scale = [ys, ys, ts] + ([1.0] if free_power else [])
    fit = fit.rescaled(names, scale)
    t2_fit = fit[name]
    if not (np.sum((t >= 0.0) & (t <= 2 * t2_fit)) >= 5 and t.min() <= 0.3 * t2_fit and t.max() >= 2 * t2_fit):
        warnings.warn(f"time grid does not span [0.3, 2] x {name} with >= 5 points", stacklevel=3)
    return fit


def fit_fid_decay(times, values=None, sigma=None) -> FitResult:
    """y0 + A exp(-(tau/T2)^2)."""
    return _fit_decay(times, values, sigma, 2, "T2_fid")


def fit_echo_decay(times, values=None, sigma=None) -> FitResult:
    """y0 + A exp(-(2tau/T2)^3), with ``times`` the total echo time."""
    return _fit_decay(times, values, sigma, 3, "T2_echo")


def fit_decay_free_exponent(times, values=None, sigma=None, power0: float = 2.0) -> FitResult:
    """Diagnostic: stretched exponential with the exponent left free."""
    return _fit_decay(times, values, sigma, power0, "T2", free_power=True)


# -- T2 versus field -------------------------------------------------------


@dataclass(frozen=True)
class T2Series:
    e_perp: np.ndarray  # V/m
    t2: np.ndarray  # s
    sigma_t2: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.e_perp, dtype=float)
        t = np.asarray(self.t2, dtype=float)
        if e.shape != t.shape or e.ndim != 1:
            raise ValueError("e_perp and t2 must be 1-d arrays of equal length")
        if np.any(t <= 0):
            raise ValueError("T2 values must be > 0")
        object.__setattr__(self, "e_perp", e)
        object.__setattr__(self, "t2", t)
        if self.sigma_t2 is not None:
            object.__setattr__(self, "sigma_t2", np.asarray(self.sigma_t2, dtype=float))

    def normalized_field(self, B_z: float, params: NVParameters) -> np.ndarray:
        """d_perp E_perp / (g_e mu_B B_z)."""
        return params.d_perp_over_h * self.e_perp / (params.gamma_hz_per_t * B_z)

    def __len__(self) -> int:
        return self.e_perp.size


def _omega_b(params: NVParameters) -> float:
    return params.g_e * CONSTANTS.mu_B / CONSTANTS.hbar


def _omega_e(params: NVParameters) -> float:
    return 2.0 * math.pi * params.d_perp_over_h


def t2_fid_curve(e_perp, B_z, b_sigma, params: NVParameters):
    rb, _ = sensitivity(B_z, e_perp, params)
    return t2_fid_from_rate(np.abs(rb) * _omega_b(params) * b_sigma)


def t2_echo_magnetic_curve(e_perp, B_z, b_sigma, tau_c_b, params: NVParameters):
    rb, _ = sensitivity(B_z, e_perp, params)
    return t2_echo_from_rate(np.abs(rb) * _omega_b(params) * b_sigma, tau_c_b)


def t2_echo_combined_curve(e_perp, B_z, b_sigma, tau_c_b, inverse_ratio, params: NVParameters):
    """Combined echo T2 with the electric channel given by e_sigma^2 / tau_c_e (V^2 m^-2 s^-1)."""
    rb, re = sensitivity(B_z, e_perp, params)
    t_b = t2_echo_from_rate(np.abs(rb) * _omega_b(params) * b_sigma, tau_c_b)
    rate_sq = (re * _omega_e(params)) ** 2 * inverse_ratio
    with np.errstate(divide="ignore"):
        t_e = np.where(rate_sq > 0, np.cbrt(12.0 / np.where(rate_sq > 0, rate_sq, 1.0)), np.inf)
    return combine_echo(t_b, t_e)


def _series_sigma(series: T2Series, scale: float = 1.0):
    return None if series.sigma_t2 is None else series.sigma_t2 / scale


def fit_bsigma(series: T2Series, B_z: float, params: NVParameters = NVParameters()) -> tuple[float, FitResult]:
    """Single-parameter fit of the magnetic-only FID law; returns b_sigma in T."""
    if len(series) < 3:
        raise ValueError("need at least 3 field points")
    ut = 1e-6
    ts = float(np.median(series.t2))
    rb, _ = sensitivity(B_z, series.e_perp, params)
    b0 = float(np.median(math.sqrt(2.0) / (np.abs(rb) * _omega_b(params) * series.t2))) / ut

    def model(e, p):
        return t2_fid_curve(e, B_z, p[0] * ut, params) / ts

    fit = nonlinear_least_squares(
        model, series.e_perp, series.t2 / ts, [b0], sigma=_series_sigma(series, ts),
        bounds=([1e-12], [np.inf]), names=["b_sigma"],
    )
    fit = fit.rescaled(["b_sigma"], [ut])
    return float(fit.values[0]), fit


def fit_tauc_magnetic(
    series: T2Series, b_sigma: float, B_z: float, params: NVParameters = NVParameters()
) -> tuple[float, FitResult]:
    """Single-parameter fit of the magnetic-only echo law; returns tau_c^b in s."""
    if len(series) < 3:
        raise ValueError("need at least 3 field points")
    ms = 1e-3
    ts = float(np.median(series.t2))
    rb, _ = sensitivity(B_z, series.e_perp, params)
    per_point = series.t2**3 * (np.abs(rb) * _omega_b(params) * b_sigma) ** 2 / 12.0
    tau0 = float(np.median(per_point)) / ms

    def model(e, p):
        return t2_echo_magnetic_curve(e, B_z, b_sigma, p[0] * ms, params) / ts

    fit = nonlinear_least_squares(
        model, series.e_perp, series.t2 / ts, [tau0], sigma=_series_sigma(series, ts),
        bounds=([1e-12], [np.inf]), names=["tau_c_b"],
    )
    fit = fit.rescaled(["tau_c_b"], [ms])
    return float(fit.values[0]), fit


# (kV/cm)^2 per ms, expressed in V^2 m^-2 s^-1
_INV_RATIO_UNIT = convert_unit(1.0, "kV/cm", "V/m") ** 2 / 1e-3


def fit_combined_echo(
    series: T2Series, b_sigma: float, B_z: float, params: NVParameters = NVParameters()
) -> tuple[dict, FitResult]:
    """Two-parameter fit of the combined magnetic + electric echo law.

    Only tau_c^e / e_sigma^2 is identifiable. The solver works with its
    inverse e_sigma^2 / tau_c^e, which is 0 when the electric channel is
    absent, and reports both. Returns ({tau_c_b, ratio, inverse_ratio}, fit).
    """
    if len(series) < 4:
        raise ValueError("need at least 4 field points")
    ms = 1e-3
    ts = float(np.median(series.t2))
    rb, re = sensitivity(B_z, series.e_perp, params)
    # 1/T^3 is linear in (1/tau_c_b, e_sigma^2/tau_c_e): seed from non-negative least squares
    a = np.column_stack([(np.abs(rb) * _omega_b(params) * b_sigma) ** 2 / 12.0 * ms, (re * _omega_e(params)) ** 2 / 12.0 * _INV_RATIO_UNIT])
    coef, _ = nnls(a / np.max(a, axis=0), series.t2**-3.0 / np.max(series.t2**-3.0))
    coef = coef * np.max(series.t2**-3.0) / np.max(a, axis=0)
    tau0 = 1.0 / coef[0] if coef[0] > 0 else float(np.median(series.t2**3 * a[:, 0] / ms)) / ms
    inv0 = max(coef[1], 0.0)

    def model(e, p):
        return t2_echo_combined_curve(e, B_z, b_sigma, p[0] * ms, p[1] * _INV_RATIO_UNIT, params) / ts

    fit = nonlinear_least_squares(
        model, series.e_perp, series.t2 / ts, [tau0, inv0], sigma=_series_sigma(series, ts),
        bounds=([1e-9, 0.0], [np.inf, np.inf]), names=["tau_c_b", "e_sigma_sq_over_tau_c_e"],
    )
    fit = fit.rescaled(["tau_c_b", "e_sigma_sq_over_tau_c_e"], [ms, _INV_RATIO_UNIT])
    tau_b, inv = fit.values
    inv_sd = fit.uncertainties[1]
    ratio = 1.0 / inv if inv > 0 else math.inf
    ratio_sd = inv_sd / inv**2 if inv > 0 else math.inf
    fit.derived["tau_c_e_over_e_sigma_sq"] = (ratio, ratio_sd)

    # without a field range where the electric term dominates, the ratio is not pinned down
    k = int(np.argmax(series.e_perp))
    mag_term = (abs(rb[k]) * _omega_b(params) * b_sigma) ** 2 / tau_b
    ele_term = (re[k] * _omega_e(params)) ** 2 * inv
    if ele_term < mag_term:
        fit.ill_conditioned = True
    return {"tau_c_b": float(tau_b), "ratio": ratio, "inverse_ratio": float(inv)}, fit


# -- bounds ----------------------------------------------------------------


def bound_esigma(b_sigma: float, env: NoiseEnvironment) -> float:
    """Largest e_sigma (V/m) whose FID contribution stays 10x below the magnetic one at env.E_perp."""
    if not env.E_perp > 0:
        raise ValueError("E_max must be > 0")
    rb, re = sensitivity_factors(env)
    if re == 0:
        return math.inf
    zeeman_sigma = env.params.g_e * CONSTANTS.mu_B * b_sigma
    stark_per_field = CONSTANTS.h * env.params.d_perp_over_h
    return (rb / re) * zeeman_sigma / stark_per_field / math.sqrt(10.0)


def bound_tauce(ratio: float, e_sigma_max: float) -> float:
    """tau_c^e upper limit (s) = (tau_c^e / e_sigma^2) * e_sigma_max^2."""
    if ratio < 0 or e_sigma_max < 0:
        raise ValueError("inputs must be non-negative")
    return ratio * e_sigma_max**2
