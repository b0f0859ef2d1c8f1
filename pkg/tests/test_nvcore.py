import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nvstark.nvcore import (
    CONSTANTS,
    FieldVector,
    NVParameters,
    PhysicalConstants,
    SphericalDirection,
    UnitError,
    cartesian_to_spherical,
    convert_unit,
    kv_per_cm,
    microtesla,
    spherical_to_cartesian,
)

finite = st.floats(-1e9, 1e9, allow_nan=False)


def test_constants_consistent():
    assert CONSTANTS.h == pytest.approx(2 * math.pi * CONSTANTS.hbar, rel=1e-15)
    # CODATA 2018 vs 2022 differ at the 1e-9 level
    assert CONSTANTS.mu_B == pytest.approx(9.2740100783e-24, rel=1e-8)


def test_constants_reject_nonpositive():
    with pytest.raises(ValueError):
        PhysicalConstants(hbar=-1.0)


def test_default_parameters():
    p = NVParameters()
    assert p.D_gs_over_h == 2.87e9
    assert p.d_perp_over_h == pytest.approx(0.17, rel=1e-15)
    assert p.d_par_over_h == pytest.approx(0.0035, rel=1e-15)
    assert p.gamma_hz_per_t == pytest.approx(2.0028 * 9.2740100783e-24 / 6.62607015e-34, rel=1e-8)


def test_dperp_conversion_is_017_hz_per_v_per_m():
    # 17 kHz cm/kV = 17e3 Hz / 1e5 (V/m)
    assert convert_unit(17.0, "kHz*cm/kV", "Hz/(V/m)") == pytest.approx(0.17, rel=1e-15)
    assert convert_unit(17.0, "kHz·cm/kV", "Hz/(V/m)") == pytest.approx(0.17, rel=1e-15)


def test_parameters_validate():
    with pytest.raises(ValueError):
        NVParameters(D_gs_over_h=0.0)
    with pytest.raises(ValueError):
        NVParameters(d_perp_over_h=-1.0)
    assert NVParameters().with_dperp_khz_cm_per_kv(19).d_perp_over_h == pytest.approx(0.19)


def test_named_conversions():
    assert kv_per_cm(100) == 1e7
    assert microtesla(13) == pytest.approx(13e-6, rel=1e-15)
    assert convert_unit(166, "kV/cm", "V/m") == 1.66e7
    assert convert_unit(2.87, "GHz", "Hz") == 2.87e9
    assert convert_unit(40, "nm", "m") == pytest.approx(4e-8, rel=1e-15)
    assert convert_unit(1.0, "ms", "us") == pytest.approx(1000.0)


def test_conversion_rejects_bad_units():
    with pytest.raises(UnitError):
        convert_unit(1.0, "T", "Hz")
    with pytest.raises(UnitError):
        convert_unit(1.0, "furlong", "m")


@given(finite, st.sampled_from([("kV/cm", "V/m"), ("uT", "T"), ("MHz", "kHz"), ("kHz*cm/kV", "Hz/(V/m)"), ("us", "ms")]))
def test_conversion_round_trip(x, pair):
    a, b = pair
    back = convert_unit(convert_unit(x, a, b), b, a)
    assert back == pytest.approx(x, rel=4 * np.finfo(float).eps, abs=1e-300)


def test_conversion_works_on_arrays():
    out = convert_unit(np.array([1.0, 2.0]), "kV/cm", "V/m")
    assert np.array_equal(out, [1e5, 2e5])


def test_field_vector():
    v = FieldVector(3.0, 4.0, 12.0)
    assert v.perp() == 5.0
    assert v.magnitude() == 13.0
    assert (-v).x == -3.0
    assert v.scaled(2).z == 24.0
    with pytest.raises(ValueError):
        FieldVector(math.nan, 0, 0)


def test_spherical_validation():
    with pytest.raises(ValueError):
        SphericalDirection(-1.0, 0.0)
    with pytest.raises(ValueError):
        SphericalDirection(1.0, 4.0)


@given(st.floats(0, 1e8), st.floats(0.01, math.pi - 0.01), st.floats(-math.pi + 0.01, math.pi - 0.01))
def test_spherical_round_trip(m, th, ph):
    v = spherical_to_cartesian(SphericalDirection(m, th, ph))
    s = cartesian_to_spherical(v)
    assert s.magnitude == pytest.approx(m, rel=1e-12, abs=1e-300)
    if m > 1e-6:
        assert s.theta == pytest.approx(th, abs=1e-9)
        assert s.phi == pytest.approx(ph, abs=1e-9)


def test_spherical_degrees():
    v = spherical_to_cartesian(SphericalDirection.from_degrees(2.0, 90.0, 90.0))
    assert v.x == pytest.approx(0.0, abs=1e-15)
    assert v.y == pytest.approx(2.0)
    assert v.z == pytest.approx(0.0, abs=1e-15)
