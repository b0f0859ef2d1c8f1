import json
import subprocess
import sys

import numpy as np
import pytest

from nvstark.cli import load_config, main, read_table
from nvstark.coherence import NoiseEnvironment, t2_fid_magnetic
from nvstark.noise import OUParams
from nvstark.nvcore import NVParameters, microtesla


def run(tmp_path, *argv, name="out.csv"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def table(path):
    meta, cols = read_table(str(path))
    return meta, cols


def test_levels_has_nine_rows_and_nv1_splitting(tmp_path):
    code, out = run(tmp_path, "levels", "--preset", "nv1")
    assert code == 0
    _, cols = table(out)
    assert len(cols["eigenvalue_hz"]) == 9
    f = dict(zip(zip(cols["ms_label"].astype(int), cols["mi_label"].astype(int)), cols["eigenvalue_hz"]))
    split = f[(1, 0)] - f[(-1, 0)]
    assert split == pytest.approx(728.7e3, abs=1e3)


def test_electronic_levels(tmp_path):
    code, out = run(tmp_path, "levels", "--electronic", "--format", "json", name="l.json")
    assert code == 0
    rows = json.loads(out.read_text())
    assert len(rows["rows"]) == 3


def test_odmr_outer_pairs_and_flat_spectrum(tmp_path):
    code, out = run(tmp_path, "odmr", "--preset", "nv1")
    assert code == 0
    _, cols = table(out)
    y = cols["contrast"]
    assert y.min() < 1.0
    code, flat = run(tmp_path, "odmr", "--preset", "nv1", "--set", "depth=0", name="flat.csv")
    _, cols = table(flat)
    assert np.all(cols["contrast"] == 1.0)


def test_odmr_fit_pipeline(tmp_path):
    code, spectrum = run(tmp_path, "odmr", "--preset", "nv1", "--set", "odmr_noise=0.002")
    assert code == 0
    code, rep = run(tmp_path, "fit", "odmr", str(spectrum), name="fit.json")
    assert code == 0
    r = json.loads(rep.read_text())
    assert r["converged"] and r["fit_kind"] == "odmr"
    c = sorted(p["value"] for p in r["parameters"] if p["name"].startswith("center"))
    # the outer pairs are centred about 2|A_par| = 4.2 MHz apart
    assert (c[4] + c[5]) / 2 - (c[0] + c[1]) / 2 == pytest.approx(4.2e6, rel=0.05)
    assert r["B_z_estimate_t"] == pytest.approx(microtesla(13), rel=0.05)


def test_simulate_then_fit_decay(tmp_path):
    code, curve = run(tmp_path, "simulate", "--preset", "nv1", "--set", "e_sigma=0", "--set", "n_realizations=2000")
    assert code == 0
    meta, cols = table(curve)
    assert meta["sequence"] == "ramsey" and int(meta["n"]) == 2000
    code, rep = run(tmp_path, "fit", "decay", str(curve), name="fit.json")
    assert code == 0
    r = json.loads(rep.read_text())
    t2 = {p["name"]: p["value"] for p in r["parameters"]}["T2_fid"]
    env = NoiseEnvironment(microtesla(13), 0.0, OUParams(microtesla(6), 0.17), None, NVParameters().with_dperp_khz_cm_per_kv(19))
    assert t2 == pytest.approx(t2_fid_magnetic(env), rel=0.1)


def test_t2_then_fit_t2echo(tmp_path):
    code, t2 = run(tmp_path, "t2", "--preset", "nv1")
    assert code == 0
    _, cols = table(t2)
    assert cols["normalized_field"][0] == 0.0
    assert cols["T2_echo_combined_s"][0] == pytest.approx(cols["T2_echo_magnetic_s"][0], rel=1e-12)
    code, rep = run(tmp_path, "fit", "t2echo", str(t2), "--preset", "nv1", name="fit.json")
    assert code == 0
    vals = {p["name"]: p["value"] for p in json.loads(rep.read_text())["parameters"]}
    assert vals["tau_c_b"] == pytest.approx(0.17, rel=1e-4)


def test_lines_then_fit_dperp(tmp_path):
    code, lines = run(tmp_path, "lines", "--preset", "nv1")
    assert code == 0
    code, rep = run(tmp_path, "fit", "dperp", str(lines), "--preset", "nv1", "--set", "d_perp_khz_cm_per_kv=10", name="fit.json")
    assert code == 0
    vals = {p["name"]: p["value"] for p in json.loads(rep.read_text())["parameters"]}
    assert vals["d_perp_over_h_khz_cm_per_kv"] == pytest.approx(19.0, rel=1e-4)


def test_simulate_byte_identical_and_worker_independent(tmp_path):
    args = ["simulate", "--preset", "nv1", "--set", "n_realizations=300", "--seed", "7"]
    _, a = run(tmp_path, *args, name="a.csv")
    _, b = run(tmp_path, *args, name="b.csv")
    _, c = run(tmp_path, *args, "--workers", "4", name="c.csv")
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_odmr_noise_deterministic(tmp_path):
    args = ["odmr", "--preset", "nv1", "--set", "odmr_noise=0.01", "--seed", "3"]
    _, a = run(tmp_path, *args, name="a.csv")
    _, b = run(tmp_path, *args, name="b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_ou_path(tmp_path):
    code, out = run(tmp_path, "ou-path", "--preset", "nv1", "--n", "50")
    assert code == 0
    meta, cols = table(out)
    assert meta["channel"] == "magnetic" and cols["value"].size == 50


def test_charge_and_voltage_helpers(tmp_path, capsys):
    assert main(["charge-field", "--r", "40nm"]) == 0
    out = capsys.readouterr().out
    kv = float(out.split("(")[1].split()[0])
    assert 2.0 <= kv <= 2.4
    assert main(["field-from-voltage", "--v", "120", "--gap", "10um", "--format", "json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["value_kv_per_cm"] == pytest.approx(120.0)


def test_input_errors_exit_2_without_output(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"B_z": 1e-5,\n "seed": }')
    code, out = run(tmp_path, "levels", "--config", str(bad))
    assert code == 2 and not out.exists()
    code, out = run(tmp_path, "levels", "--set", "nonsense_key=1")
    assert code == 2 and not out.exists()
    assert main(["field-from-voltage", "--v", "1", "--gap", "0"]) == 2


def test_config_layering(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"B_z": 2e-5, "seed": 4}))
    cfg = load_config(str(f), "nv1", ["seed=9"])
    assert cfg.B_z == 2e-5 and cfg.seed == 9 and cfg.b_sigma == microtesla(6)
    with pytest.raises(Exception):
        load_config(None, None, ["E_x=1", "E_magnitude=2"])


def test_physics_errors_exit_3(tmp_path):
    code, out = run(tmp_path, "t2", "--preset", "nv3")
    assert code == 3 and not out.exists()
    # a fixed step coarser than the sampling rule allows
    code, out = run(tmp_path, "simulate", "--preset", "nv1", "--set", "dt=1e-3", "--set", "n_realizations=100")
    assert code == 3 and not out.exists()


def test_non_converged_fit_exits_4(tmp_path):
    # a lone outlier drives the decay model into the iteration cap
    f = tmp_path / "spike.csv"
    t = np.linspace(0, 1e-5, 10)
    y = np.r_[np.zeros(9), 1e6]
    f.write_text("# schema=1 sequence=ramsey\ntime_s,population\n" + "".join(f"{a},{b}\n" for a, b in zip(t, y)))
    code, out = run(tmp_path, "fit", "decay", str(f), name="fit.json")
    assert code == 4
    assert json.loads(out.read_text())["converged"] is False


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "nvstark", "field-from-voltage", "--v", "1", "--gap", "1cm"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "100 V/m" in r.stdout
