"""
Physical constants, NV coupling parameters, field types and unit conversion.

Everything inside the package is SI (V/m, T, s, Hz). Coupling constants are
stored as frequencies, i.e. the quantity X/h, because that is how they are
usually quoted. Angular frequencies only appear inside the coherence formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import constants as _sc


class PhysicsDomainError(ValueError):
    """Inputs are valid numbers but fall outside the supported physical regime."""


class UnitError(ValueError):
    """Unsupported unit or unit pair."""


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA constants (scipy's vintage).

    ``g_e`` here is the free-electron value. The NV value used by every
    physics routine lives in :class:`NVParameters`.
    """

    hbar: float = _sc.hbar
    h: float = _sc.h
    mu_B: float = _sc.physical_constants["Bohr magneton"][0]
    g_e: float = abs(_sc.physical_constants["electron g factor"][0])
    eps0: float = _sc.epsilon_0
    elementary_charge: float = _sc.e
    boltzmann_k: float = _sc.k

    def __post_init__(self):
        for name in ("hbar", "h", "mu_B", "g_e", "eps0", "elementary_charge", "boltzmann_k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if abs(self.h - 2 * math.pi * self.hbar) > 1e-12 * self.h:
            raise ValueError("h and hbar are inconsistent")


CONSTANTS = PhysicalConstants()


# kHz·cm/kV -> Hz per (V/m): 1e3 Hz / 1e5 (V/m)
_KHZ_CM_PER_KV = 1e3 / 1e5


@dataclass(frozen=True)
class NVParameters:
    """Ground-state NV⁻ / ¹⁴N coupling constants, all divided by h (Hz or Hz per V/m)."""

    D_gs_over_h: float = 2.87e9
    d_par_over_h: float = 0.35 * _KHZ_CM_PER_KV
    d_perp_over_h: float = 17.0 * _KHZ_CM_PER_KV
    A_par_over_h: float = -2.1e6
    A_perp_over_h: float = -2.7e6
    P_over_h: float = -5.0e6
    g_e: float = 2.0028

    def __post_init__(self):
        if not self.D_gs_over_h > 0:
            raise ValueError("D_gs_over_h must be positive")
        if not self.d_perp_over_h > 0:
            raise ValueError("d_perp_over_h must be positive")
        if not self.g_e > 0:
            raise ValueError("g_e must be positive")

    def with_dperp_khz_cm_per_kv(self, value: float) -> NVParameters:
        return replace(self, d_perp_over_h=value * _KHZ_CM_PER_KV)

    @property
    def gamma_hz_per_t(self) -> float:
        """Electron gyromagnetic ratio g_e μ_B / h in Hz/T."""
        return self.g_e * CONSTANTS.mu_B / CONSTANTS.h


@dataclass(frozen=True)
class FieldVector:
    """Cartesian field in the NV frame (z along the N-V axis)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite field component in {self}")

    def perp(self) -> float:
        return math.hypot(self.x, self.y)

    def magnitude(self) -> float:
        return math.hypot(self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def __neg__(self) -> FieldVector:
        return FieldVector(-self.x, -self.y, -self.z)

    def scaled(self, k: float) -> FieldVector:
        return FieldVector(k * self.x, k * self.y, k * self.z)


@dataclass(frozen=True)
class SphericalDirection:
    """Field given as magnitude, polar angle from the NV axis and azimuth (radians)."""

    magnitude: float
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.magnitude) and self.magnitude >= 0):
            raise ValueError("magnitude must be finite and >= 0")
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError("theta must lie in [0, pi]")
        if not math.isfinite(self.phi):
            raise ValueError("phi must be finite")

    @classmethod
    def from_degrees(cls, magnitude: float, theta_deg: float, phi_deg: float = 0.0) -> SphericalDirection:
        return cls(magnitude, math.radians(theta_deg), math.radians(phi_deg))


def spherical_to_cartesian(direction: SphericalDirection) -> FieldVector:
    m, th, ph = direction.magnitude, direction.theta, direction.phi
    s = math.sin(th)
    return FieldVector(m * s * math.cos(ph), m * s * math.sin(ph), m * math.cos(th))


def cartesian_to_spherical(v: FieldVector) -> SphericalDirection:
    m = v.magnitude()
    if m == 0.0:
        return SphericalDirection(0.0, 0.0, 0.0)
    theta = math.acos(max(-1.0, min(1.0, v.z / m)))
    return SphericalDirection(m, theta, math.atan2(v.y, v.x))


# unit -> (dimension, exact factor to the SI unit of that dimension)
_UNITS: dict[str, tuple[str, Fraction]] = {
    "V/m": ("efield", Fraction(1)),
    "kV/cm": ("efield", Fraction(10**5)),
    "T": ("bfield", Fraction(1)),
    "mT": ("bfield", Fraction(1, 10**3)),
    "uT": ("bfield", Fraction(1, 10**6)),
    "μT": ("bfield", Fraction(1, 10**6)),
    "Hz": ("freq", Fraction(1)),
    "kHz": ("freq", Fraction(10**3)),
    "MHz": ("freq", Fraction(10**6)),
    "GHz": ("freq", Fraction(10**9)),
    "Hz/(V/m)": ("dipole", Fraction(1)),
    "kHz*cm/kV": ("dipole", Fraction(1, 100)),
    "kHz·cm/kV": ("dipole", Fraction(1, 100)),
    "s": ("time", Fraction(1)),
    "ms": ("time", Fraction(1, 10**3)),
    "us": ("time", Fraction(1, 10**6)),
    "μs": ("time", Fraction(1, 10**6)),
    "m": ("length", Fraction(1)),
    "cm": ("length", Fraction(1, 100)),
    "mm": ("length", Fraction(1, 1000)),
    "um": ("length", Fraction(1, 10**6)),
    "μm": ("length", Fraction(1, 10**6)),
    "nm": ("length", Fraction(1, 10**9)),
}


def convert_unit(value, from_unit: str, to_unit: str):
    """Convert ``value`` (scalar or array) between units of the same dimension.

    The ratio of the two scale factors is formed exactly before it touches the
    value, so ``convert(convert(x, a, b), b, a)`` is x to within a few ulp.
    """
    try:
        dim_a, fa = _UNITS[from_unit]
        dim_b, fb = _UNITS[to_unit]
    except KeyError as exc:
        raise UnitError(f"unknown unit {exc.args[0]!r}; supported: {sorted(_UNITS)}") from None
    if dim_a != dim_b:
        raise UnitError(f"cannot convert {from_unit} ({dim_a}) to {to_unit} ({dim_b})")
    ratio = fa / fb
    if ratio == 1:
        return value
    if ratio.denominator == 1:
        return value * float(ratio.numerator)
    if ratio.numerator == 1:
        return value / float(ratio.denominator)
    return value * float(ratio.numerator) / float(ratio.denominator)


def kv_per_cm(value: float) -> float:
    """Shorthand: kV/cm -> V/m."""
    return convert_unit(value, "kV/cm", "V/m")


def microtesla(value: float) -> float:
    return convert_unit(value, "uT", "T")
