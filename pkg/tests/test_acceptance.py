"""End-to-end acceptance checks, one test per numbered criterion.

Each test tags itself with ``criterion(n, detail)``; the terminal summary
prints one PASS/FAIL line per criterion. The detail string is filled in
before the assertion so failing runs still report the measured value.
"""

import math
import time

import numpy as np
import pytest

from nvstark.cli import main
from nvstark.coherence import (
    NoiseEnvironment,
    echo_envelope_analytic,
    fid_envelope_analytic,
    fid_exponent,
    fid_exponent_fast,
    fid_exponent_slow,
    sensitivity_factors,
    simulate_sequence_mc,
    t2_echo_combined,
    t2_echo_electric,
    t2_echo_magnetic,
    t2_fid_combined,
    t2_fid_magnetic,
)
from nvstark.electrostatics import ElectrodeGeometry, point_charge_field, uniform_field_from_voltage
from nvstark.fitting import (
    T2Series,
    bound_esigma,
    bound_tauce,
    fit_bsigma,
    fit_combined_echo,
    fit_dperp,
    fit_tauc_magnetic,
    t2_echo_combined_curve,
    t2_fid_curve,
)
from nvstark.hamiltonian import (
    build_electronic_hamiltonian,
    effective_two_level_splitting,
    eigensolve,
    resonance_frequencies,
    transition_rate,
)
from nvstark.noise import OUParams
from nvstark.nvcore import CONSTANTS, FieldVector, NVParameters, kv_per_cm, microtesla

P = NVParameters(g_e=2.0028)
P17 = P.with_dperp_khz_cm_per_kv(17)
P19 = P.with_dperp_khz_cm_per_kv(19)
BZ = microtesla(13)
BSIG = microtesla(6)
TAU_B = 0.17
RATIO = 6e-13  # 6 ms cm^2/kV^2 in s m^2/V^2
E_SIG = kv_per_cm(0.5)


def nv1(e_perp=0.0, electric=False):
    el = OUParams(E_SIG, RATIO * E_SIG**2) if electric else None
    return NoiseEnvironment(BZ, e_perp, OUParams(BSIG, TAU_B), el, P19)


def test_c01_zero_field_spectrum(criterion):
    f = eigensolve(build_electronic_hamiltonian(P, FieldVector(), FieldVector())).frequencies_hz
    d = P.D_gs_over_h
    ref = np.array([-2 * d / 3, d / 3, d / 3])
    err = float(np.max(np.abs(f - ref) / np.abs(ref)))
    criterion(1, f"max relative error {err:.2e}")
    assert err <= 1e-10


def test_c02_parity(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        e = kv_per_cm(rng.uniform(0, 166))
        phi = rng.uniform(0, 2 * math.pi)
        E = FieldVector(e * math.cos(phi), e * math.sin(phi), 0.0)
        B = FieldVector(0, 0, microtesla(rng.uniform(0.1, 30)))
        a = resonance_frequencies(P, E, B).sorted_frequencies()
        b = resonance_frequencies(P, -E, B).sorted_frequencies()
        worst = max(worst, float(np.max(np.abs(a - b))))
    criterion(2, f"worst |f(E) - f(-E)| = {worst:.3g} Hz over 20 configurations")
    assert worst < 1.0


def test_c03_effective_splitting(criterion):
    res = resonance_frequencies(P17, FieldVector(kv_per_cm(100), 0, 0), FieldVector(0, 0, BZ))
    full = res.get("+", 0) - res.get("-", 0)
    fp, fm = effective_two_level_splitting(P17, kv_per_cm(100), BZ)
    criterion(3, f"9x9 {full / 1e6:.4f} MHz, closed form {(fp - fm) / 1e6:.4f} MHz")
    assert abs(full - 3.477e6) <= 10e3
    assert abs((fp - fm) - 3.477e6) <= 10e3


def test_c04_hyperfine_compression(criterion):
    res = resonance_frequencies(P17, FieldVector(kv_per_cm(100), 0, 0), FieldVector(0, 0, BZ))
    spacing = max(float(np.max(np.diff(res.branch_frequencies(b)))) for b in "+-")
    criterion(4, f"largest in-branch spacing {spacing / 1e6:.4f} MHz")
    assert spacing < 2.1e6


def test_c05_t2_fid(criterion):
    t0 = t2_fid_magnetic(nv1())
    ratio = t2_fid_magnetic(nv1(kv_per_cm(166))) / t0
    criterion(5, f"T2_fid(0) = {t0 * 1e6:.4f} us, ratio at 166 kV/cm = {ratio:.3f}")
    assert t0 == pytest.approx(1.34e-6, rel=0.01)
    assert 8 <= ratio <= 12


def test_c06_echo_scale_and_plateau(criterion):
    te = t2_echo_magnetic(nv1())
    a = t2_echo_combined(nv1(kv_per_cm(166), electric=True))
    b = t2_echo_combined(nv1(kv_per_cm(300), electric=True))
    criterion(6, f"T2_echo(0) = {te * 1e3:.4f} ms, combined 166/300 kV/cm = {a / b:.4f}")
    assert 0.9e-4 <= te <= 1.5e-4
    assert abs(a / b - 1) <= 0.1


def test_c07_algebraic_identities(criterion):
    rng = np.random.default_rng(7)
    worst_r = worst_q = worst_c = 0.0
    for _ in range(1000):
        p = P.with_dperp_khz_cm_per_kv(rng.uniform(5, 30))
        env = NoiseEnvironment(
            microtesla(rng.uniform(0.1, 50)),
            kv_per_cm(rng.uniform(0, 300)),
            OUParams(microtesla(rng.uniform(0.1, 20)), rng.uniform(1e-4, 1)),
            OUParams(kv_per_cm(rng.uniform(0.01, 2)), rng.uniform(1e-5, 1e-1)),
            p,
        )
        rb, re = sensitivity_factors(env)
        worst_r = max(worst_r, abs(rb**2 + re**2 - 1))
        # single-channel FID times from environments with one channel removed
        tb = t2_fid_magnetic(NoiseEnvironment(env.B_z, env.E_perp, env.magnetic, None, p))
        te = t2_fid_combined(NoiseEnvironment(env.B_z, env.E_perp, None, env.electric, p))
        t = t2_fid_combined(env)
        if math.isfinite(te):
            worst_q = max(worst_q, abs(t**-2 / (tb**-2 + te**-2) - 1))
        eb, ee = t2_echo_magnetic(env), t2_echo_electric(env)
        if math.isfinite(ee):
            worst_c = max(worst_c, abs(t2_echo_combined(env) ** -3 / (eb**-3 + ee**-3) - 1))
    criterion(7, f"R identity {worst_r:.1e}, quadrature {worst_q:.1e}, cube law {worst_c:.1e}")
    assert worst_r <= 1e-14
    assert worst_q <= 1e-12
    assert worst_c <= 1e-12


def test_c08_monte_carlo_vs_analytic(criterion):
    env = nv1()
    start = time.perf_counter()
    worst = 0.0
    for kind, t2, envelope in (
        ("ramsey", t2_fid_magnetic(env), fid_envelope_analytic),
        ("hahn_echo", t2_echo_magnetic(env), echo_envelope_analytic),
    ):
        times = np.linspace(0, 2.5 * t2, 20)
        curve = simulate_sequence_mc(kind, times, env, 10_000, seed=8, workers=4)
        dev = np.abs(curve.population - envelope(times, env))
        se = curve.mc_std_error
        z = np.where(se > 0, dev / np.where(se > 0, se, 1), np.where(dev > 1e-12, np.inf, 0.0))
        worst = max(worst, float(np.max(z)))
    elapsed = time.perf_counter() - start
    criterion(8, f"worst deviation {worst:.2f} std errors, {elapsed:.1f} s")
    assert worst <= 3.0
    assert elapsed < 60.0


def test_c09_slow_and_fast_limits(criterion):
    rate, tau_c = 1e6, 1e-4
    slow_tau, fast_tau = tau_c / 100, 100 * tau_c
    slow = abs(fid_exponent(slow_tau, rate, tau_c) / fid_exponent_slow(slow_tau, rate) - 1)
    fast = abs(fid_exponent(fast_tau, rate, tau_c) / fid_exponent_fast(fast_tau, rate, tau_c) - 1)
    criterion(9, f"relative deviation slow {slow:.2e}, fast {fast:.2e} (tolerance 1e-3)")
    assert slow <= 1e-3
    assert fast <= 1e-3


E_SWEEP = kv_per_cm(np.linspace(0, 166, 10))


def test_c10_round_trip_fits(criterion):
    # d_perp: 8 fields up to 100 kV/cm, 5 kHz line noise
    es = [FieldVector(kv_per_cm(e), 0, 0) for e in np.linspace(0, 100, 8)]
    B = FieldVector(0, 0, BZ)
    clean = np.array([resonance_frequencies(P17, e, B).sorted_frequencies() for e in es])
    hits_d = 0
    for seed in range(100):
        meas = clean + 5e3 * np.random.default_rng(seed).standard_normal(clean.shape)
        d, _ = fit_dperp(es, meas, BZ, P.with_dperp_khz_cm_per_kv(12))
        hits_d += abs(d / P17.d_perp_over_h - 1) < 0.01

    fid = t2_fid_curve(E_SWEEP, BZ, BSIG, P19)
    hits_b = 0
    for seed in range(100):
        y = fid * (1 + 0.05 * np.random.default_rng(1000 + seed).standard_normal(fid.size))
        b, _ = fit_bsigma(T2Series(E_SWEEP, y, 0.05 * fid), BZ, P19)
        hits_b += abs(b / BSIG - 1) < 0.1

    echo = t2_echo_combined_curve(E_SWEEP, BZ, BSIG, TAU_B, 1 / RATIO, P19)
    hits_c = 0
    for seed in range(100):
        y = echo * (1 + 0.05 * np.random.default_rng(2000 + seed).standard_normal(echo.size))
        r, _ = fit_combined_echo(T2Series(E_SWEEP, y, 0.05 * echo), BSIG, BZ, P19)
        hits_c += abs(r["tau_c_b"] / TAU_B - 1) < 0.2 and abs(r["ratio"] / RATIO - 1) < 0.2
    criterion(10, f"d_perp {hits_d}/100, b_sigma {hits_b}/100, (tau_c_b, ratio) {hits_c}/100")
    assert hits_d >= 90
    assert hits_b >= 90
    assert hits_c >= 90


def test_c11_model_selection(criterion):
    truth = t2_echo_combined_curve(E_SWEEP, BZ, BSIG, TAU_B, 1 / RATIO, P19)
    y = truth * (1 + 0.02 * np.random.default_rng(11).standard_normal(truth.size))
    s = T2Series(E_SWEEP, y)
    _, mag = fit_tauc_magnetic(s, BSIG, BZ, P19)
    _, comb = fit_combined_echo(s, BSIG, BZ, P19)
    q = mag.reduced_rss / comb.reduced_rss
    criterion(11, f"reduced residual ratio {q:.1f}")
    assert q >= 2


def test_c12_bounds_pipeline(criterion):
    bound = bound_esigma(BSIG, NoiseEnvironment(BZ, kv_per_cm(100), params=P19))
    tau = bound_tauce(RATIO, bound)
    criterion(12, f"e_sigma bound {bound / kv_per_cm(1):.3f} kV/cm, tau_c_e bound {tau * 1e3:.3f} ms")
    assert kv_per_cm(0.4) <= bound <= kv_per_cm(0.7)
    assert 1.0e-3 <= tau <= 1.8e-3


def test_c13_electrostatics(criterion):
    f = point_charge_field(CONSTANTS.elementary_charge, 40e-9, 5.7, 2.3)
    u = uniform_field_from_voltage(ElectrodeGeometry(120.0, 10e-6))
    criterion(13, f"point charge {f / kv_per_cm(1):.4f} kV/cm, gap field {u / kv_per_cm(1):.6f} kV/cm")
    assert kv_per_cm(2.0) <= f <= kv_per_cm(2.4)
    assert u == pytest.approx(kv_per_cm(120), rel=1e-15)


def test_c14_transition_rates(criterion):
    thetas = np.linspace(0, math.pi / 2, 50)
    sums = [transition_rate(t, p, "+") + transition_rate(t, p, "-") for t in thetas for p in np.linspace(0, 2 * math.pi, 9)]
    flat = [transition_rate(t, math.pi / 2, b) for t in thetas for b in "+-"]
    asym = [transition_rate(t, 0.0, "-") - transition_rate(t, 0.0, "+") for t in thetas]
    sum_err = max(abs(s - 1) for s in sums)
    flat_err = max(abs(r - 0.5) for r in flat)
    criterion(14, f"sum error {sum_err:.1e}, phi=pi/2 spread {flat_err:.1e}")
    assert sum_err <= 1e-14
    assert flat_err <= 1e-14
    assert np.all(np.diff(asym) > 0)


def test_c15_cli_determinism(criterion, tmp_path):
    base = ["--preset", "nv1", "--seed", "15"]
    commands = {
        "levels": ["levels", *base],
        "odmr": ["odmr", *base, "--set", "odmr_noise=0.01"],
        "lines": ["lines", *base],
        "t2": ["t2", *base],
        "simulate": ["simulate", *base, "--set", "n_realizations=500"],
        "ou-path": ["ou-path", *base, "--n", "200"],
        "charge-field": ["charge-field", *base, "--r", "40nm"],
        "field-from-voltage": ["field-from-voltage", *base, "--v", "120", "--gap", "10um"],
    }
    outputs = {}
    for name, argv in commands.items():
        runs = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}.out"
            assert main([*argv, "--out", str(out)]) == 0
            runs.append(out.read_bytes())
        outputs[name] = runs
    par = tmp_path / "simulate-par.out"
    assert main([*commands["simulate"], "--workers", "4", "--out", str(par)]) == 0
    outputs["simulate"].append(par.read_bytes())

    inputs = {
        "odmr": ["odmr", str(tmp_path / "odmr-0.out")],
        "decay": ["decay", str(tmp_path / "simulate-0.out")],
        "dperp": ["dperp", str(tmp_path / "lines-0.out")],
        "t2fid": ["t2fid", str(tmp_path / "t2-0.out")],
        "t2echo": ["t2echo", str(tmp_path / "t2-0.out")],
    }
    for kind, argv in inputs.items():
        runs = []
        for k in range(2):
            out = tmp_path / f"fit-{kind}-{k}.json"
            main(["fit", *argv, *base, "--out", str(out)])
            runs.append(out.read_bytes())
        outputs[f"fit {kind}"] = runs
    differing = [name for name, runs in outputs.items() if len(set(runs)) != 1 or not runs[0]]
    criterion(15, f"{len(outputs)} commands, differing: {differing or 'none'}")
    assert not differing
