"""
Command-line entry point ``nvstark``.

Every command reads an optional flat JSON config (``--config``), layered as
preset < config file < ``--set KEY=VALUE`` < dedicated flags. Tables are
written as CSV (or JSON with ``--format json``) behind a ``# schema=1``
comment line; all numbers carry 9 significant digits.

Exit codes: 0 success, 2 input error, 3 physics-domain error, 4 fit did not
converge (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
import warnings
from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from . import coherence, electrostatics, fitting, hamiltonian, noise
from .nvcore import (
    CONSTANTS,
    FieldVector,
    NVParameters,
    PhysicsDomainError,
    SphericalDirection,
    UnitError,
    convert_unit,
    spherical_to_cartesian,
)

SCHEMA = 1
EXIT_OK, EXIT_INPUT, EXIT_PHYSICS, EXIT_NOCONV = 0, 2, 3, 4


class InputError(ValueError):
    """Malformed config, arguments or input file."""


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    # coupling constants (frequencies in Hz, dipoles in kHz cm/kV)
    D_gs_over_h: float = 2.87e9
    d_par_khz_cm_per_kv: float = 0.35
    d_perp_khz_cm_per_kv: float = 17.0
    A_par_over_h: float = -2.1e6
    A_perp_over_h: float = -2.7e6
    P_over_h: float = -5.0e6
    g_e: float = 2.0028
    # fields, cartesian (V/m, T) ...
    E_x: float | None = None
    E_y: float | None = None
    E_z: float | None = None
    B_x: float | None = None
    B_y: float | None = None
    B_z: float | None = None
    # ... or spherical (angles in degrees from the NV axis)
    E_magnitude: float | None = None
    E_theta_deg: float | None = None
    E_phi_deg: float | None = None
    B_magnitude: float | None = None
    B_theta_deg: float | None = None
    B_phi_deg: float | None = None
    # noise channels
    b_sigma: float = 0.0
    tau_c_b: float = 1.0
    e_sigma: float = 0.0
    tau_c_e: float = 1.0
    # pulse sequence; echo times are the total time 2 tau
    sequence: str = "ramsey"
    t_start: float = 0.0
    t_stop: float | None = None
    t_count: int = 20
    t_spacing: str = "linear"
    # Monte Carlo
    n_realizations: int = 10000
    seed: int = 0
    workers: int = 1
    dt: float | None = None
    mode: str = "linearized"
    # ODMR synthesis
    f_start: float | None = None
    f_stop: float | None = None
    f_count: int = 1201
    linewidth: float = 150e3
    depth: float = 0.1
    odmr_noise: float = 0.0
    # field sweeps
    sweep_start_kv_cm: float = 0.0
    sweep_stop_kv_cm: float = 166.0
    sweep_count: int = 12

    def __post_init__(self):
        cart = any(getattr(self, k) is not None for k in ("E_x", "E_y", "E_z", "B_x", "B_y", "B_z"))
        sph = any(
            getattr(self, k) is not None
            for k in ("E_magnitude", "E_theta_deg", "E_phi_deg", "B_magnitude", "B_theta_deg", "B_phi_deg")
        )
        if cart and sph:
            raise InputError("fields: use either cartesian (E_x..B_z) or spherical (E_magnitude..) keys, not both")
        if self.t_count < 2:
            raise InputError("t_count must be >= 2")
        if self.t_spacing not in ("linear", "log"):
            raise InputError("t_spacing must be 'linear' or 'log'")
        if self.sequence not in coherence.SEQUENCES:
            raise InputError(f"sequence must be one of {coherence.SEQUENCES}")
        if self.mode not in ("linearized", "exact"):
            raise InputError("mode must be 'linearized' or 'exact'")
        if self.b_sigma < 0 or self.e_sigma < 0:
            raise InputError("noise sigma must be >= 0")
        if self.tau_c_b <= 0 or self.tau_c_e <= 0:
            raise InputError("correlation times must be > 0")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        if self.sweep_count < 1 or self.f_count < 2:
            raise InputError("sweep_count must be >= 1 and f_count >= 2")

    def nv_params(self) -> NVParameters:
        return NVParameters(
            D_gs_over_h=self.D_gs_over_h,
            d_par_over_h=convert_unit(self.d_par_khz_cm_per_kv, "kHz*cm/kV", "Hz/(V/m)"),
            d_perp_over_h=convert_unit(self.d_perp_khz_cm_per_kv, "kHz*cm/kV", "Hz/(V/m)"),
            A_par_over_h=self.A_par_over_h,
            A_perp_over_h=self.A_perp_over_h,
            P_over_h=self.P_over_h,
            g_e=self.g_e,
        )

    def _vector(self, prefix: str) -> FieldVector:
        mag = getattr(self, f"{prefix}_magnitude")
        if mag is not None or getattr(self, f"{prefix}_theta_deg") is not None:
            return spherical_to_cartesian(
                SphericalDirection.from_degrees(
                    mag or 0.0, getattr(self, f"{prefix}_theta_deg") or 0.0, getattr(self, f"{prefix}_phi_deg") or 0.0
                )
            )
        return FieldVector(*(getattr(self, f"{prefix}_{c}") or 0.0 for c in "xyz"))

    @property
    def E(self) -> FieldVector:
        return self._vector("E")

    @property
    def B(self) -> FieldVector:
        return self._vector("B")

    def environment(self, E_perp: float | None = None) -> coherence.NoiseEnvironment:
        mag = noise.OUParams(self.b_sigma, self.tau_c_b) if self.b_sigma > 0 else None
        ele = noise.OUParams(self.e_sigma, self.tau_c_e) if self.e_sigma > 0 else None
        return coherence.NoiseEnvironment(
            B_z=self.B.z, E_perp=self.E.perp() if E_perp is None else E_perp,
            magnetic=mag, electric=ele, params=self.nv_params(),
        )


PRESETS: dict[str, dict[str, Any]] = {
    "nv1": {
        "B_z": 13e-6, "d_perp_khz_cm_per_kv": 19.0, "b_sigma": 6e-6, "tau_c_b": 0.17,
        "e_sigma": 0.5e5, "tau_c_e": 1.5e-3,
    },
    "nv2": {"B_z": 12e-6, "d_perp_khz_cm_per_kv": 16.0, "b_sigma": 5e-6, "tau_c_b": 0.17},
    "nv3": {"B_z": 11e-6, "d_perp_khz_cm_per_kv": 16.0},
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: Any) -> Any:
    if key not in _FIELD_TYPES:
        raise InputError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    if value is None:
        if "None" not in kind:
            raise InputError(f"config key {key!r}: null not allowed")
        return None
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise InputError(f"config key {key!r}: expected a string")
        return value
    if kind.startswith("int"):
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise InputError(f"config key {key!r}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"config key {key!r}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise InputError(f"config key {key!r}: must be finite")
    return float(value)


def _parse_set(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise InputError(f"--set expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: str | None, preset: str | None, overrides: list[str] | None = None, **flags) -> RunConfig:
    values: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise InputError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise InputError(f"{path}: top level must be a JSON object")
        values.update(data)
    for item in overrides or []:
        k, v = _parse_set(item)
        values[k] = v
    values.update({k: v for k, v in flags.items() if v is not None})
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    try:
        return RunConfig(**coerced)
    except InputError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from None


# -- output ----------------------------------------------------------------


def fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.9g" % float(x)


def _json_num(x: Any) -> Any:
    if x is None or isinstance(x, (str, bool)):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    v = float("%.9g" % float(x))
    return v if math.isfinite(v) else str(v)


def render_table(columns: list[str], rows: list[list[Any]], fmt_kind: str, meta: dict | None = None) -> str:
    meta = meta or {}
    if fmt_kind == "json":
        doc = {"schema": SCHEMA, **meta, "columns": columns, "rows": [[_json_num(v) for v in r] for r in rows]}
        return json.dumps(doc, indent=1) + "\n"
    buf = io.StringIO()
    extra = "".join(f" {k}={v}" for k, v in meta.items())
    buf.write(f"# schema={SCHEMA}{extra}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def render_report(report: dict) -> str:
    def walk(o):
        if isinstance(o, dict):
            return {k: walk(v) for k, v in o.items()}
        if isinstance(o, list):
            return [walk(v) for v in o]
        return _json_num(o)

    return json.dumps(walk(report), indent=1) + "\n"


def emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# -- input tables ----------------------------------------------------------


def read_table(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a schema-1 CSV: returns (header metadata, columns)."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    meta: dict[str, str] = {}
    body = []
    for ln in lines:
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif ln.strip():
            body.append(ln)
    if meta.get("schema") not in (None, str(SCHEMA)):
        raise InputError(f"{path}: unsupported schema {meta['schema']}")
    if not body:
        raise InputError(f"{path}: no header row")
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    rows = list(reader)
    cols: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[j]) if r[j].strip() else math.nan for r in rows])
        except (ValueError, IndexError):
            raise InputError(f"{path}: column {name!r} has a non-numeric or missing entry") from None
    return meta, cols


def _require(cols: dict, names: list[str], path: str) -> None:
    missing = [n for n in names if n not in cols]
    if missing:
        raise InputError(f"{path}: missing column(s) {missing}; found {sorted(cols)}")


def _pick(cols: dict, choices: list[str], path: str) -> np.ndarray:
    for c in choices:
        if c in cols:
            return cols[c]
    raise InputError(f"{path}: need one of the columns {choices}; found {sorted(cols)}")


# -- commands --------------------------------------------------------------


def _tau_grid(cfg: RunConfig, default_stop: float) -> np.ndarray:
    stop = cfg.t_stop if cfg.t_stop is not None else default_stop
    if not stop > cfg.t_start:
        raise InputError("t_stop must exceed t_start")
    if cfg.t_spacing == "log":
        if cfg.t_start <= 0:
            raise InputError("log spacing needs t_start > 0")
        return np.geomspace(cfg.t_start, stop, cfg.t_count)
    return np.linspace(cfg.t_start, stop, cfg.t_count)


def cmd_levels(cfg: RunConfig, args) -> tuple[str, int]:
    p = cfg.nv_params()
    build = hamiltonian.build_electronic_hamiltonian if args.electronic else hamiltonian.build_full_hamiltonian
    es = hamiltonian.eigensolve(build(p, cfg.E, cfg.B), label=False)
    try:
        labels = hamiltonian.label_states(es).labels
    except hamiltonian.StrongMixingError:
        if args.electronic:
            raise
        # m_s = +-1 fully mixed: label upper states by branch within each nuclear sector
        low, pairs = hamiltonian.sector_assignment(es)
        labels = [None] * 9
        for mi in low:
            labels[low[mi]] = (0, mi)
            labels[pairs[mi][1]] = (1, mi)
            labels[pairs[mi][0]] = (-1, mi)
    rows = [[k, f, ms, mi] for k, (f, (ms, mi)) in enumerate(zip(es.frequencies_hz, labels))]
    return render_table(["index", "eigenvalue_hz", "ms_label", "mi_label"], rows, args.format), EXIT_OK


def _lines_and_weights(cfg: RunConfig, E: FieldVector):
    p = cfg.nv_params()
    res = hamiltonian.resonance_frequencies(p, E, cfg.B)
    if E.perp() == 0.0 and cfg.B.z == 0.0:
        theta = 0.0
    else:
        theta = hamiltonian.mixing_angle(p, E.perp(), abs(cfg.B.z))
    phi_e = math.atan2(E.y, E.x)
    weights = [2.0 * hamiltonian.transition_rate(theta, phi_e, t.branch) for t in res.transitions]
    return res, np.array(weights)


def cmd_odmr(cfg: RunConfig, args) -> tuple[str, int]:
    if not cfg.linewidth > 0:
        raise InputError("linewidth must be > 0")
    if cfg.depth < 0 or cfg.odmr_noise < 0:
        raise InputError("depth and odmr_noise must be >= 0")
    p = cfg.nv_params()
    f0 = cfg.f_start if cfg.f_start is not None else p.D_gs_over_h - 6e6
    f1 = cfg.f_stop if cfg.f_stop is not None else p.D_gs_over_h + 6e6
    if not f1 > f0:
        raise InputError("f_stop must exceed f_start")
    f = np.linspace(f0, f1, cfg.f_count)
    res, w = _lines_and_weights(cfg, cfg.E)
    centers = np.array([t.frequency for t in res.transitions])
    y = fitting.gaussian_dips(f, 1.0, centers, np.full(centers.size, cfg.linewidth), cfg.depth * w)
    if cfg.odmr_noise > 0:
        y = y + cfg.odmr_noise * noise.rng_for(cfg.seed, 2, 0).standard_normal(f.size)
    rows = [[a, b] for a, b in zip(f, y)]
    return render_table(["frequency_hz", "contrast"], rows, args.format), EXIT_OK


def cmd_lines(cfg: RunConfig, args) -> tuple[str, int]:
    """Sorted line positions along an E sweep in the direction of the configured E field (x if none)."""
    e = cfg.E
    direction = e.as_array() / e.magnitude() if e.magnitude() > 0 else np.array([1.0, 0.0, 0.0])
    p = cfg.nv_params()
    rows = []
    for kv in np.linspace(cfg.sweep_start_kv_cm, cfg.sweep_stop_kv_cm, cfg.sweep_count):
        vec = FieldVector(*(convert_unit(kv, "kV/cm", "V/m") * direction))
        lines = hamiltonian.resonance_frequencies(p, vec, cfg.B).sorted_frequencies()
        rows.append([vec.perp(), vec.x, vec.y, vec.z, *lines])
    cols = ["e_perp_v_per_m", "e_x_v_per_m", "e_y_v_per_m", "e_z_v_per_m"] + [f"f{i}_hz" for i in range(1, 7)]
    return render_table(cols, rows, args.format), EXIT_OK


def cmd_t2(cfg: RunConfig, args) -> tuple[str, int]:
    if cfg.b_sigma == 0 and cfg.e_sigma == 0:
        raise PhysicsDomainError("no noise channel configured: T2 is infinite")
    p = cfg.nv_params()
    B_z = cfg.B.z
    rows = []
    for kv in np.linspace(cfg.sweep_start_kv_cm, cfg.sweep_stop_kv_cm, cfg.sweep_count):
        e = convert_unit(kv, "kV/cm", "V/m")
        env = cfg.environment(E_perp=e)
        norm = p.d_perp_over_h * e / (p.gamma_hz_per_t * B_z) if B_z != 0 else math.inf
        rows.append([
            e, kv, norm,
            coherence.t2_fid_magnetic(env), coherence.t2_fid_combined(env),
            coherence.t2_echo_magnetic(env), coherence.t2_echo_combined(env),
        ])
    cols = [
        "e_perp_v_per_m", "E_perp_kVcm", "normalized_field",
        "T2_fid_s", "T2_fid_combined_s", "T2_echo_magnetic_s", "T2_echo_combined_s",
    ]
    return render_table(cols, rows, args.format), EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> tuple[str, int]:
    env = cfg.environment()
    if cfg.sequence == "ramsey":
        t2 = coherence.t2_fid_combined(env)
    else:
        t2 = coherence.t2_echo_combined(env)
    if cfg.t_stop is None and not math.isfinite(t2):
        raise InputError("t_stop is required when no noise is configured")
    times = _tau_grid(cfg, 2.5 * t2)
    curve = coherence.simulate_sequence_mc(
        cfg.sequence, times, env, cfg.n_realizations, cfg.seed, dt=cfg.dt, mode=cfg.mode, workers=cfg.workers
    )
    ana = coherence.analytic_curve(cfg.sequence, times, env).population
    rows = [list(r) for r in zip(curve.times, curve.population, curve.mc_std_error, ana)]
    meta = {"sequence": cfg.sequence, "seed": cfg.seed, "n": cfg.n_realizations}
    cols = ["time_s", "population", "std_error", "analytic_population"]
    return render_table(cols, rows, args.format, meta), EXIT_OK


def cmd_ou_path(cfg: RunConfig, args) -> tuple[str, int]:
    if args.channel == "magnetic":
        params, stream = noise.OUParams(cfg.b_sigma, cfg.tau_c_b), noise.MAGNETIC_STREAM
    else:
        params, stream = noise.OUParams(cfg.e_sigma, cfg.tau_c_e), noise.ELECTRIC_STREAM
    dt = args.dt if args.dt is not None else params.tau_c / 100.0
    path = noise.sample_ou_path(params, dt, args.n, cfg.seed, stream=stream)
    rows = [[t, x] for t, x in zip(path.times, path.samples)]
    return render_table(["time_s", "value"], rows, args.format, {"channel": args.channel, "seed": cfg.seed}), EXIT_OK


def _finish_fit(fit: fitting.FitResult, kind: str, args, seed=None, units=None, extra=None) -> tuple[str, int]:
    report = fit.report(kind, seed=seed, units=units)
    if extra:
        report.update(extra)
    return render_report(report), EXIT_OK if fit.converged else EXIT_NOCONV


def cmd_fit(cfg: RunConfig, args) -> tuple[str, int]:
    meta, cols = read_table(args.input)
    kind = args.kind
    p = cfg.nv_params()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if kind == "odmr":
            _require(cols, ["frequency_hz", "contrast"], args.input)
            model, fit = fitting.fit_odmr_gaussians(
                fitting.Spectrum(cols["frequency_hz"], cols["contrast"]), n_dips=args.n_dips
            )
            extra = {}
            if args.n_dips == 6:
                rs = fitting.resonance_set_from_zero_field_lines(model.centers)
                extra["B_z_estimate_t"] = fitting.estimate_bz(rs, p)
            units = {n: "Hz" for n in fit.names if n.startswith(("center", "width"))}
            text, code = _finish_fit(fit, "odmr", args, units=units, extra=extra)
        elif kind == "decay":
            seq = args.sequence or meta.get("sequence")
            if seq not in coherence.SEQUENCES:
                raise InputError("decay fit needs --sequence ramsey|hahn_echo (or a sequence= header)")
            _require(cols, ["time_s", "population"], args.input)
            fn = fitting.fit_fid_decay if seq == "ramsey" else fitting.fit_echo_decay
            fit = fn(cols["time_s"], cols["population"])
            text, code = _finish_fit(fit, f"decay_{seq}", args, units={fit.names[2]: "s"})
        elif kind == "dperp":
            _require(cols, [f"f{i}_hz" for i in range(1, 7)], args.input)
            if "e_x_v_per_m" in cols:
                _require(cols, ["e_y_v_per_m", "e_z_v_per_m"], args.input)
                es = [FieldVector(x, y, z) for x, y, z in zip(cols["e_x_v_per_m"], cols["e_y_v_per_m"], cols["e_z_v_per_m"])]
            else:
                es = [FieldVector(e, 0.0, 0.0) for e in _pick(cols, ["e_perp_v_per_m"], args.input)]
            meas = np.column_stack([cols[f"f{i}_hz"] for i in range(1, 7)])
            _, fit = fitting.fit_dperp(es, meas, cfg.B.z, p)
            text, code = _finish_fit(
                fit, "dperp", args,
                units={"d_perp_over_h": "Hz/(V/m)", "d_perp_over_h_khz_cm_per_kv": "kHz*cm/kV"},
            )
        elif kind in ("t2fid", "t2echo"):
            e = _pick(cols, ["e_perp_v_per_m"], args.input) if "e_perp_v_per_m" in cols else (
                convert_unit(_pick(cols, ["E_perp_kVcm"], args.input), "kV/cm", "V/m")
            )
            names = [args.column] if args.column else (
                ["t2_s", "T2_fid_s"] if kind == "t2fid" else ["t2_s", "T2_echo_combined_s"]
            )
            t2 = _pick(cols, names, args.input)
            sig = cols.get("sigma_t2_s")
            series = fitting.T2Series(e, t2, sig)
            if kind == "t2fid":
                _, fit = fitting.fit_bsigma(series, cfg.B.z, p)
                text, code = _finish_fit(fit, "t2fid", args, units={"b_sigma": "T"})
            else:
                if not cfg.b_sigma > 0:
                    raise InputError("t2echo fit needs b_sigma > 0 in the config (from a t2fid fit)")
                _, fit = fitting.fit_combined_echo(series, cfg.b_sigma, cfg.B.z, p)
                text, code = _finish_fit(
                    fit, "t2echo", args,
                    units={"tau_c_b": "s", "e_sigma_sq_over_tau_c_e": "V^2 m^-2 s^-1", "tau_c_e_over_e_sigma_sq": "s m^2 V^-2"},
                    extra={"ill_conditioned": fit.ill_conditioned},
                )
        else:  # pragma: no cover - argparse restricts choices
            raise InputError(f"unknown fit kind {kind!r}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return text, code


_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*([A-Za-zμ/]*)\s*$")


def parse_length(s: str) -> float:
    m = _QTY.match(s)
    if not m or m.group(1) is None:
        raise InputError(f"cannot parse length {s!r}")
    unit = m.group(2) or "m"
    try:
        return convert_unit(float(m.group(1)), unit, "m")
    except UnitError as exc:
        raise InputError(str(exc)) from None


def parse_charge(s: str) -> float:
    """'e', '-e', '2e' (elementary charges) or a bare number in coulombs."""
    m = _QTY.match(s)
    if not m:
        raise InputError(f"cannot parse charge {s!r}")
    num, unit = m.group(1), m.group(2)
    if unit == "e":
        value = 1.0 if num in (None, "+") else (-1.0 if num == "-" else float(num))
        return value * CONSTANTS.elementary_charge
    if s.strip() in ("-e", "+e"):
        return (-1.0 if s.strip() == "-e" else 1.0) * CONSTANTS.elementary_charge
    if unit in ("", "C") and num is not None:
        return float(num)
    raise InputError(f"cannot parse charge {s!r}")


def _value_report(name: str, value: float, args, extra: dict | None = None) -> str:
    kv = convert_unit(value, "V/m", "kV/cm")
    if args.format == "json":
        return render_report({"schema": SCHEMA, "quantity": name, "value_v_per_m": value, "value_kv_per_cm": kv, **(extra or {})})
    return f"# schema={SCHEMA}\n{name} {fmt(value)} V/m ({fmt(kv)} kV/cm)\n"


def cmd_charge_field(cfg: RunConfig, args) -> tuple[str, int]:
    q = parse_charge(args.q)
    r = parse_length(args.r)
    if not r > 0:
        raise InputError("r must be > 0")
    if args.kd < 1 or args.kout < 1:
        raise InputError("dielectric constants must be >= 1")
    e = electrostatics.point_charge_field(q, r, args.kd, args.kout)
    return _value_report("point_charge_field", e, args, {"q_c": q, "r_m": r}), EXIT_OK


def cmd_field_from_voltage(cfg: RunConfig, args) -> tuple[str, int]:
    gap = parse_length(args.gap)
    try:
        geom = electrostatics.ElectrodeGeometry(args.v, gap)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    e = electrostatics.uniform_field_from_voltage(geom)
    return _value_report("uniform_field", e, args, {"voltage_v": args.v, "gap_m": gap}), EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat JSON config file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in parameter set")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--workers", type=int, help="Monte Carlo worker threads")
    common.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    table = argparse.ArgumentParser(add_help=False, parents=[common])
    table.add_argument("--format", choices=("csv", "json"), default="csv")
    single = argparse.ArgumentParser(add_help=False, parents=[common])
    single.add_argument("--format", choices=("text", "json"), default="text")

    ap = argparse.ArgumentParser(prog="nvstark", description="NV spin levels and coherence under static electric fields.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("levels", parents=[table], help="eigenvalue table")
    s.add_argument("--electronic", action="store_true", help="3x3 electronic Hamiltonian only")
    s.set_defaults(func=cmd_levels)

    sub.add_parser("odmr", parents=[table], help="synthetic ODMR spectrum").set_defaults(func=cmd_odmr)
    sub.add_parser("lines", parents=[table], help="line positions along an E sweep").set_defaults(func=cmd_lines)
    sub.add_parser("t2", parents=[table], help="T2 laws along an E sweep").set_defaults(func=cmd_t2)
    sub.add_parser("simulate", parents=[table], help="Monte Carlo Ramsey / echo curve").set_defaults(func=cmd_simulate)

    s = sub.add_parser("ou-path", parents=[table], help="sample one OU noise path")
    s.add_argument("--channel", choices=("magnetic", "electric"), default="magnetic")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--dt", type=float)
    s.set_defaults(func=cmd_ou_path)

    s = sub.add_parser("fit", parents=[table], help="fit a CSV and emit a JSON report")
    s.add_argument("kind", choices=("odmr", "decay", "dperp", "t2fid", "t2echo"))
    s.add_argument("input", help="input CSV")
    s.add_argument("--n-dips", type=int, default=6)
    s.add_argument("--sequence", choices=coherence.SEQUENCES)
    s.add_argument("--column", help="T2 column to fit")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("charge-field", parents=[single], help="field of a surface point charge")
    s.add_argument("--q", default="e", help="charge: 'e', '-2e' or coulombs")
    s.add_argument("--r", required=True, help="distance, e.g. 40nm")
    s.add_argument("--kd", type=float, default=electrostatics.KAPPA_DIAMOND)
    s.add_argument("--kout", type=float, default=electrostatics.KAPPA_OIL)
    s.set_defaults(func=cmd_charge_field)

    s = sub.add_parser("field-from-voltage", parents=[single], help="uniform field V/gap")
    s.add_argument("--v", type=float, required=True, help="applied voltage (V)")
    s.add_argument("--gap", required=True, help="electrode gap, e.g. 10um")
    s.set_defaults(func=cmd_field_from_voltage)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if getattr(args, "n", 1) < 1:
            raise InputError("--n must be >= 1")
        cfg = load_config(args.config, args.preset, args.set, seed=args.seed, workers=args.workers)
        text, code = args.func(cfg, args)
    except coherence.TimeStepError as exc:
        print(f"error: {exc} (suggested dt = {exc.suggested_dt:.9g} s)", file=sys.stderr)
        return EXIT_PHYSICS
    except (PhysicsDomainError, hamiltonian.NonHermitianError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except (InputError, UnitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    emit(text, args.out)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
