"""Closed-form field estimates: uniform gap field and a surface point charge."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nvcore import CONSTANTS, FieldVector, SphericalDirection, cartesian_to_spherical

KAPPA_DIAMOND = 5.7
KAPPA_OIL = 2.3


@dataclass(frozen=True)
class ElectrodeGeometry:
    applied_voltage: float
    gap: float
    dielectric_kd: float = KAPPA_DIAMOND
    dielectric_kout: float = KAPPA_OIL
    nv_depth: float = 40e-9

    def __post_init__(self):
        if not self.gap > 0:
            raise ValueError("gap must be > 0")
        if not self.nv_depth > 0:
            raise ValueError("nv_depth must be > 0")
        if self.dielectric_kd < 1 or self.dielectric_kout < 1:
            raise ValueError("dielectric constants must be >= 1")


def uniform_field_from_voltage(g: ElectrodeGeometry) -> float:
    """V/gap in V/m. Assumes no voltage drop at the contacts."""
    return g.applied_voltage / g.gap


def point_charge_field(q: float, r: float, kd: float = KAPPA_DIAMOND, kout: float = KAPPA_OIL) -> float:
    """Field magnitude (V/m) at distance r from a charge q sitting on the diamond surface.

    E = q / (4 pi eps0 r^2) * 2 / (kd + kout). Screening is not modelled.
    """
    if not r > 0:
        raise ValueError("r must be > 0")
    return abs(q) / (4.0 * math.pi * CONSTANTS.eps0 * r**2) * 2.0 / (kd + kout)


def point_charge_field_vector(
    q: float, charge_pos, nv_pos, kd: float = KAPPA_DIAMOND, kout: float = KAPPA_OIL
) -> tuple[FieldVector, SphericalDirection]:
    """Field at nv_pos from a surface charge at charge_pos (both in the NV frame, metres)."""
    d = np.asarray(nv_pos, dtype=float) - np.asarray(charge_pos, dtype=float)
    r = float(np.linalg.norm(d))
    mag = point_charge_field(q, r, kd, kout)
    unit = d / r if q >= 0 else -d / r
    vec = FieldVector(*(mag * unit))
    return vec, cartesian_to_spherical(vec)
