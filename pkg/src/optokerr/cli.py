"""Command-line front end.

Every run is driven by an INI config (``--config``); ``--set section.key=value``
fills in keys the file does not define. Each output CSV starts with a
comment header holding the package version and the fully resolved config,
and the resolved config is also written to ``run.ini`` in the output
directory, so a run can be repeated byte for byte.

Exit status: 0 success, 1 other error, 2 usage, 3 validation or config,
4 convergence, 5 instability.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import __version__
from .backaction import EIGENVALUE, QUANTUM_NOISE, cooling_trace
from .core import (ConfigError, ConvergenceError, DriveParams, InstabilityError, OptoKerrError, SystemParams,
                   ValidationError, angular_to_hz, config_float, hz_to_angular, params_from_config, read_config)
from .io import read_csv, write_csv
from .oracle import compare_linearized, convergence_sweep, FockProblem
from .spectrum import linearize, rates_sweep, spectrum_trace
from .steadystate import bistable_window, hysteresis_sweep, solve_steady_states

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_CONVERGENCE = 4
EXIT_INSTABILITY = 5

COMMANDS = ("steady", "spectrum", "rates", "cooling-trace", "fit", "oracle", "calibrate")
FIT_KINDS = ("circle", "kerr-circle", "mech", "g0-ramp", "relaxation", "cooling")

DEFAULT_GRID_POINTS = 401


# ---------------------------------------------------------------------------
# run context
# ---------------------------------------------------------------------------

class Run:
    """Resolved config, output directory and seed for one invocation."""

    def __init__(self, command: str, cp: configparser.ConfigParser, out: Path, jobs: int):
        self.command = command
        self.cp = cp
        self.out = out
        self.jobs = max(int(jobs), 1)
        self.written: List[Path] = []

    @property
    def seed(self) -> int:
        return int(self.cp.get("run", "seed"))

    def has(self, section: str, key: str) -> bool:
        return self.cp.has_option(section, key)

    def get(self, section: str, key: str, default: Optional[str] = None) -> str:
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        if default is None:
            raise ConfigError("missing required key", key=f"{section}.{key}")
        return default

    def float(self, section: str, key: str, default=None) -> float:
        return config_float(self.cp, section, key, default)

    def int(self, section: str, key: str, default=None) -> int:
        v = self.float(section, key, default)
        if v != int(v):
            raise ConfigError(f"not an integer: {v!r}", key=f"{section}.{key}")
        return int(v)

    def floats(self, section: str, key: str, default: Optional[Sequence[float]] = None) -> List[float]:
        if not self.cp.has_option(section, key):
            if default is None:
                raise ConfigError("missing required key", key=f"{section}.{key}")
            return list(default)
        raw = self.cp.get(section, key).replace(",", " ").split()
        try:
            vals = [float(v) for v in raw]
        except ValueError:
            raise ConfigError(f"not a list of numbers: {self.cp.get(section, key)!r}", key=f"{section}.{key}") from None
        if not vals or not all(math.isfinite(v) for v in vals):
            raise ConfigError("need one or more finite numbers", key=f"{section}.{key}")
        return vals

    def bool(self, section: str, key: str, default: bool = False) -> bool:
        if not self.cp.has_option(section, key):
            return default
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"not a boolean: {self.cp.get(section, key)!r}", key=f"{section}.{key}") from None

    def choice(self, section: str, key: str, options: Sequence[str], default: str) -> str:
        v = self.get(section, key, default)
        if v not in options:
            raise ConfigError(f"must be one of {', '.join(options)}, got {v!r}", key=f"{section}.{key}")
        return v

    def header(self, **extra) -> dict:
        hdr = {"command": self.command}
        for section in self.cp.sections():
            for key, value in self.cp.items(section):
                hdr[f"config.{section}.{key}"] = value.strip()
        hdr.update(extra)
        return hdr

    def write(self, name: str, text_fn: Callable[[Path], str]) -> Path:
        path = self.out / name
        text_fn(path)
        self.written.append(path)
        return path

    def map(self, fn, items):
        """Ordered map over independent jobs; output order never depends on ``--jobs``."""
        items = list(items)
        if self.jobs == 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, items))


def _tag(x: float) -> str:
    return f"{x:g}".replace("-", "m").replace("+", "")


def _params(run: Run) -> SystemParams:
    return params_from_config(run.cp)


def _grid(run: Run, params: SystemParams) -> np.ndarray:
    """Detuning grid in rad/s from ``[grid]`` (Hz, or units of κ with ``*_kappa`` keys)."""
    n = run.int("grid", "points", DEFAULT_GRID_POINTS)
    if n < 2:
        raise ConfigError("grid needs at least 2 points", key="grid.points")
    if run.has("grid", "detuning_start_hz") or run.has("grid", "detuning_stop_hz"):
        lo = hz_to_angular(run.float("grid", "detuning_start_hz"))
        hi = hz_to_angular(run.float("grid", "detuning_stop_hz"))
    else:
        kappa = params.cavity.kappa
        lo = run.float("grid", "detuning_start_kappa", -3.0) * kappa
        hi = run.float("grid", "detuning_stop_kappa", 1.0) * kappa
    if not hi > lo:
        raise ConfigError("detuning stop must exceed start", key="grid.detuning_stop_hz")
    return np.linspace(lo, hi, n)


def _drives(run: Run) -> List[DriveParams]:
    """One :class:`DriveParams` per value of ``drive.r`` (or ``drive.n_in``)."""
    ref = hz_to_angular(run.float("drive", "reference_kerr_hz")) if run.has("drive", "reference_kerr_hz") else None
    if run.has("drive", "r") and run.has("drive", "n_in"):
        raise ConfigError("give only one of drive.r or drive.n_in", key="drive.n_in")
    if run.has("drive", "n_in"):
        return [DriveParams(n_in=v) for v in run.floats("drive", "n_in")]
    return [DriveParams(r=v, reference_kerr=ref) for v in run.floats("drive", "r")]


def _drive_tag(d: DriveParams) -> str:
    return f"r{_tag(d.r)}" if d.r is not None else f"nin{_tag(d.n_in)}"


def _directions(run: Run) -> List[str]:
    v = run.choice("drive", "direction", ("up", "down", "both"), "both")
    return ["up", "down"] if v == "both" else [v]


def _oriented(grid: np.ndarray, direction: str) -> np.ndarray:
    return grid if direction == "up" else grid[::-1]


def _with_kerr(params: SystemParams, kerr_hz: float) -> SystemParams:
    from dataclasses import replace
    return replace(params, cavity=replace(params.cavity, kerr=hz_to_angular(kerr_hz)))


def _drive_header(d: DriveParams) -> dict:
    return {"drive_r": d.r, "drive_n_in": d.n_in,
            "reference_kerr_hz": angular_to_hz(d.reference_kerr) if d.reference_kerr is not None else None}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_steady(run: Run) -> None:
    """All roots over the (Δ, drive) grid, plus the hysteresis path per sweep direction."""
    params = _params(run)
    grid = _grid(run, params)
    for drive in _drives(run):
        window = bistable_window(params, drive) if params.cavity.kerr != 0 else None
        hdr = run.header(**_drive_header(drive))
        if window is not None and window.exists:
            hdr.update(window_lo_hz=angular_to_hz(window.delta_lo), window_hi_hz=angular_to_hz(window.delta_hi))
        rows = []
        for d in grid:
            roots = solve_steady_states(params, drive.at(d), window=window)
            for b in roots:
                rows.append((angular_to_hz(d), len(roots), b.label, b.n_c, int(b.stable), b.multiplicity))
        tag = _drive_tag(drive)
        run.write(f"steady_{tag}_roots.csv", lambda p: write_csv(
            p, ["detuning_hz", "n_roots", "branch", "n_c", "stable", "multiplicity"], rows, header=hdr))
        for direction in _directions(run):
            sweep = hysteresis_sweep(params, drive, _oriented(grid, direction), direction)
            run.write(f"steady_{tag}_{direction}.csv",
                      lambda p: sweep.to_csv(p, header=dict(hdr, direction=direction)))


def cmd_spectrum(run: Run) -> None:
    """S_nn over ω at one detuning, one trace per (Kerr value, stable branch)."""
    params = _params(run)
    kerrs = run.floats("spectrum", "kerr_hz", [angular_to_hz(params.cavity.kerr)])
    detuning = hz_to_angular(run.float("spectrum", "detuning_hz"))
    span = hz_to_angular(run.float("spectrum", "omega_max_hz", 4.0 * angular_to_hz(params.cavity.kappa)))
    npts = run.int("spectrum", "points", 801)
    lab = run.bool("spectrum", "lab_frame", False)
    omega = np.linspace(-span, span, npts)
    for drive in _drives(run):
        for k_hz in kerrs:
            p = _with_kerr(params, k_hz)
            for b in solve_steady_states(p, drive.at(detuning)):
                if not b.stable:
                    continue
                res = spectrum_trace(linearize(b, p), omega, lab_frame=lab)
                hdr = run.header(kerr_hz=k_hz, detuning_hz=angular_to_hz(detuning), n_c=b.n_c,
                                 gamma_s_hz=angular_to_hz(res.gamma_s), gamma_as_hz=angular_to_hz(res.gamma_as),
                                 **_drive_header(drive))
                run.write(f"spectrum_{_drive_tag(drive)}_K{_tag(k_hz)}_{b.label}.csv",
                          lambda path: res.to_csv(path, header=hdr))


def cmd_rates(run: Run) -> None:
    """Γ_S, Γ_AS and their difference along the detuning grid per Kerr value and direction."""
    params = _params(run)
    grid = _grid(run, params)
    kerrs = run.floats("rates", "kerr_hz", [angular_to_hz(params.cavity.kerr)])
    policy = run.choice("rates", "branch_policy", ("sweep", "low", "high"), "sweep")
    jobs = [(d, k, direction) for d in _drives(run) for k in kerrs for direction in _directions(run)]

    def one(job):
        drive, k_hz, direction = job
        return rates_sweep(_with_kerr(params, k_hz), drive, _oriented(grid, direction), direction, policy)

    for (drive, k_hz, direction), tr in zip(jobs, run.map(one, jobs)):
        hdr = run.header(kerr_hz=k_hz, branch_policy=policy,
                         jumps_hz=" ".join(repr(angular_to_hz(tr.detunings[i])) for i in tr.jumps),
                         **_drive_header(drive))
        run.write(f"rates_{_drive_tag(drive)}_K{_tag(k_hz)}_{direction}.csv",
                  lambda p: tr.to_csv(p, header=hdr))


def cmd_cooling_trace(run: Run) -> None:
    """Branch-resolved backaction traces, one file per (r, direction)."""
    params = _params(run)
    grid = _grid(run, params)
    method = run.choice("cooling", "method", (QUANTUM_NOISE, EIGENVALUE), QUANTUM_NOISE)
    policy = run.choice("cooling", "branch_policy", ("sweep", "low", "high"), "sweep")
    jobs = [(d, direction) for d in _drives(run) for direction in _directions(run)]

    def one(job):
        drive, direction = job
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cooling_trace(params, drive, _oriented(grid, direction), direction, policy, method)

    for (drive, direction), tr in zip(jobs, run.map(one, jobs)):
        hdr = run.header(branch_policy=policy, n_th=params.mech.n_th,
                         jumps_hz=" ".join(repr(angular_to_hz(tr.detunings[i])) for i in tr.jumps),
                         **_drive_header(drive))
        run.write(f"cooling_{_drive_tag(drive)}_{direction}.csv", lambda p: tr.to_csv(p, header=hdr))


def cmd_oracle(run: Run) -> None:
    """Linearized vs Lindblad S_nn at one monostable point."""
    kappa = hz_to_angular(run.float("oracle", "kappa_hz", 1.0))
    kerr = hz_to_angular(run.float("oracle", "kerr_hz", 0.3 * angular_to_hz(kappa)))
    detuning = hz_to_angular(run.float("oracle", "detuning_hz", -0.5 * angular_to_hz(kappa)))
    n_c = run.float("oracle", "n_c", 2.0)
    span = hz_to_angular(run.float("oracle", "omega_max_hz", 3.0 * angular_to_hz(kappa)))
    npts = run.int("oracle", "points", 61)
    cutoff = run.int("oracle", "cutoff", 0) or None
    override = run.bool("oracle", "override", False)
    omega = np.linspace(-span, span, npts)
    cmp_ = compare_linearized(n_c, detuning, kerr, omega, kappa=kappa, cutoff=cutoff, jobs=run.jobs,
                              override=override)
    hdr = run.header(n_classical=cmp_.n_classical, mean_n_oracle=cmp_.mean_n, cutoff=cmp_.cutoff,
                     max_rel_dev=cmp_.max_rel_error, mean_rel_dev=cmp_.mean_rel_error)
    cols = ["omega_hz", "s_nn"]
    w_hz = angular_to_hz(omega)
    run.write("oracle_linearized.csv",
              lambda p: write_csv(p, cols, zip(w_hz, cmp_.s_linear), header=dict(hdr, branch="linearized")))
    run.write("oracle_lindblad.csv",
              lambda p: write_csv(p, cols, zip(w_hz, cmp_.s_oracle), header=dict(hdr, branch="lindblad")))
    run.write("oracle_comparison.csv", lambda p: write_csv(
        p, ["omega_hz", "s_linearized", "s_lindblad", "rel_dev"],
        zip(w_hz, cmp_.s_linear, cmp_.s_oracle, cmp_.rel_error), header=hdr))
    if run.bool("oracle", "convergence", True):
        prob = FockProblem.from_classical(n_c, detuning, kerr, kappa=kappa, cutoff=cmp_.cutoff)
        rep = convergence_sweep(prob)
        run.write("oracle_convergence.txt", lambda p: p.write_text(
            f"# optokerr {__version__}\n" + "".join(f"# {k}: {v}\n" for k, v in hdr.items()) + rep.to_text()))


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _inputs(run: Run, section: str = "fit") -> List[Path]:
    raw = run.get(section, "input", "")
    return [Path(p) for p in raw.split()]


def _write_report(run: Run, name: str, report, axis: str = "x") -> None:
    hdr = run.header()
    run.write(f"{name}.csv", lambda p: report.to_csv(p, header=hdr))
    if report.residuals is not None:
        run.write(f"{name}_residuals.csv", lambda p: report.residuals_to_csv(p, axis_name=axis))


def _linear_truth(run: Run) -> dict:
    fc = run.float("synthetic", "freq_hz", 8.1e9)
    kappa_hz = run.float("synthetic", "kappa_hz", 2.8e6)
    return dict(a=run.float("synthetic", "a", 0.8), alpha_env=run.float("synthetic", "alpha_env", 1.0),
                tau_delay=run.float("synthetic", "tau_delay_s", 50e-9), Q_l=fc / kappa_hz,
                Q_c_mag=run.float("synthetic", "q_c_ratio", 2.0) * fc / kappa_hz,
                phi_0=run.float("synthetic", "phi_0", 0.1), omega_c=hz_to_angular(fc))


def _fit_circle(run: Run, synthetic: bool) -> None:
    from .fitkit import S21Trace, circle_fit_linear, circle_fit_residuals, synthetic_s21
    if synthetic:
        truth = _linear_truth(run)
        fc, kap = angular_to_hz(truth["omega_c"]), angular_to_hz(truth["omega_c"] / truth["Q_l"])
        f = np.linspace(fc - 5 * kap, fc + 5 * kap, run.int("synthetic", "points", 401))
        z = synthetic_s21(f, truth, noise=run.float("synthetic", "noise", 1e-3), rng=run.seed)
        trace = S21Trace(f, z)
        run.write("data_circle.csv", lambda p: trace.to_csv(p))
    else:
        trace = S21Trace.from_csv(_single(run))
    fit = circle_fit_linear(trace)
    rep = fit.report()
    rep.residuals = circle_fit_residuals(trace, fit)
    rep.residual_axis = trace.freq_hz
    _write_report(run, "fit_circle", rep, "freq_hz")


def _fit_kerr(run: Run, synthetic: bool) -> None:
    from .fitkit import S21Trace, circle_fit_kerr
    from .fitkit.circle import synthetic_kerr_set
    if synthetic:
        truth = _linear_truth(run)
        fc, kap = angular_to_hz(truth["omega_c"]), angular_to_hz(truth["omega_c"] / truth["Q_l"])
        f = np.linspace(fc - 5.4 * kap, fc + 5.4 * kap, run.int("synthetic", "points", 401))
        traces = synthetic_kerr_set(truth, hz_to_angular(run.float("synthetic", "kerr_hz", 12e3)), f,
                                    attenuation_error_db=run.float("synthetic", "attenuation_error_db", 0.0),
                                    noise=run.float("synthetic", "noise", 1e-3), rng=run.seed)
        for i, t in enumerate(traces):
            run.write(f"data_kerr_{i}.csv", lambda p: t.to_csv(p))
    else:
        traces = [S21Trace.from_csv(p) for p in _inputs(run)]
    fit = circle_fit_kerr(traces, attenuation_offset_db=run.float("fit", "attenuation_offset_db", 0.0))
    rep = fit.report()
    rep.meta["branch_jumps"] = ";".join(" ".join(str(i) for i in j) for j in fit.branch_jumps)
    _write_report(run, "fit_kerr-circle", rep)


def _fit_mech(run: Run, synthetic: bool) -> None:
    from .fitkit import PsdTrace, lorentzian_psd, mech_sideband_fit, synthetic_psd
    if synthetic:
        fm = run.float("synthetic", "omega_m_hz", 287.3e3)
        gm = run.float("synthetic", "gamma_m_hz", 0.4)
        f = np.linspace(fm - 12.5 * gm, fm + 12.5 * gm, run.int("synthetic", "points", 801))
        s = synthetic_psd(f, run.float("synthetic", "area", 1.0), hz_to_angular(fm), hz_to_angular(gm),
                          run.float("synthetic", "offset", 0.3), averages=run.int("synthetic", "averages", 200),
                          rng=run.seed)
        psd = PsdTrace(f, s, averages=run.int("synthetic", "averages", 200))
        run.write("data_mech.csv", lambda p: psd.to_csv(p))
    else:
        psd = PsdTrace.from_csv(_single(run))
    fit = mech_sideband_fit(psd)
    rep = fit.report()
    model = lorentzian_psd(psd.freq_hz, fit.amplitude, angular_to_hz(fit.omega_m), angular_to_hz(fit.gamma_m),
                           fit.offset)
    rep.residuals = psd.psd - model
    rep.residual_axis = psd.freq_hz
    _write_report(run, "fit_mech", rep, "freq_hz")


def _ramp(run: Run, synthetic: bool, section: str):
    """``(T, g0²·n_m in rad²/s²)`` pairs and ω_m; CSV columns ``temperature_k, g0_sq_n_m_hz2``."""
    from .fitkit import synthetic_ramp
    omega_m = hz_to_angular(run.float(section, "omega_m_hz", run.float("mech", "freq_hz", 287.3e3)))
    if synthetic:
        temps = run.floats("synthetic", "temperatures_k", [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
        ramp = synthetic_ramp(temps, hz_to_angular(run.float("synthetic", "g0_hz", 99.0)), omega_m,
                              rel_noise=run.float("synthetic", "noise", 0.02), rng=run.seed)
        run.write("data_ramp.csv", lambda p: write_csv(
            p, ["temperature_k", "g0_sq_n_m_hz2"], [(t, y / (2 * math.pi) ** 2) for t, y in ramp]))
        return ramp, omega_m
    _, cols = read_csv(_single(run, section))
    return list(zip(cols["temperature_k"], cols["g0_sq_n_m_hz2"] * (2 * math.pi) ** 2)), omega_m


def _fit_g0(run: Run, synthetic: bool, section: str = "fit") -> None:
    from .fitkit import calibrate_g0
    ramp, omega_m = _ramp(run, synthetic, section)
    cal = calibrate_g0(ramp, omega_m, t_min_fit=run.float(section, "t_min_fit_k", 0.25))
    rep = cal.report()
    rep.rows.insert(0, ("g0_hz", angular_to_hz(cal.g0), angular_to_hz(cal.g0_stderr), "Hz"))
    rep.residuals = np.array([y - cal.slope * t for t, y in ramp]) / (2 * math.pi) ** 2
    rep.residual_axis = np.array([t for t, _ in ramp])
    _write_report(run, "fit_g0-ramp", rep, "temperature_k")


def _fit_relaxation(run: Run, synthetic: bool) -> None:
    from .fitkit import relaxation_fit, relaxation_from_csv, relaxation_to_csv, synthetic_relaxation
    if synthetic:
        rng = np.random.default_rng(run.seed)
        t = np.linspace(0.0, run.float("synthetic", "duration_s", 5.0), run.int("synthetic", "points", 101))
        tau = run.float("synthetic", "tau_s", 0.96)
        series = []
        for i, a in enumerate(run.floats("synthetic", "delta_f0_hz", [-80.0, -150.0, -300.0])):
            y = synthetic_relaxation(t, a, tau, offset=run.float("synthetic", "offset_hz", 0.0),
                                     noise=run.float("synthetic", "noise_hz", 2.0), rng=rng)
            series.append((t, y))
            run.write(f"data_relaxation_{i}.csv", lambda p: relaxation_to_csv(t, y, p))
    else:
        series = [relaxation_from_csv(p) for p in _inputs(run)]
    fit = relaxation_fit(series, joint=run.bool("fit", "joint", True))
    rep = fit.report()
    t_all = np.concatenate([t for t, _ in series])
    rep.residuals = np.concatenate([y - (o + a * np.exp(-t / fit.tau_relax))
                                    for (t, y), a, o in zip(series, fit.delta_f0, fit.offset)])
    rep.residual_axis = t_all
    _write_report(run, "fit_relaxation", rep, "t_s")


def _fit_cooling(run: Run, synthetic: bool) -> None:
    """Low-power cooling-trace fit, then predictions at higher powers (chained pipeline)."""
    from .backaction import CoolingTrace
    from .fitkit.cooling import compare_traces, cooling_model, cooling_trace_fit, extrapolate
    params = _params(run)
    grid = _grid(run, params)
    r0 = run.float("fit", "r0", 0.54)
    direction = run.choice("fit", "direction", ("up", "down"), "up")
    d_fit = _oriented(grid, direction)
    if synthetic:
        _, n_m = cooling_model(params, r0, d_fit, direction)
        noise = run.float("synthetic", "noise", 0.0)
        if noise:
            n_m = n_m * (1.0 + noise * np.random.default_rng(run.seed).standard_normal(n_m.shape))
        run.write("data_cooling.csv", lambda p: write_csv(
            p, ["detuning_hz", "n_m"], zip(angular_to_hz(d_fit), n_m), header=run.header(r=r0)))
    else:
        _, cols = read_csv(_single(run))
        d_fit = hz_to_angular(cols["detuning_hz"])
        n_m = cols["n_m"]
        if "valid" in cols:
            n_m = np.where(cols["valid"] > 0, n_m, np.nan)
    start_k = run.float("fit", "kerr_start_hz", angular_to_hz(params.cavity.kerr))
    fit = cooling_trace_fit(d_fit, n_m, _with_kerr(params, start_k), run.float("fit", "r_start", r0), direction)
    rep = fit.report()
    rep.rows.insert(1, ("kerr_hz", angular_to_hz(fit.kerr), angular_to_hz(fit.stderr.get("kerr", math.nan)), "Hz"))
    _write_report(run, "fit_cooling", rep)
    for ratio_r in run.floats("fit", "extrapolate_r", []):
        ratio = ratio_r / r0
        for dn in _directions(run):
            gg = _oriented(grid, dn)
            n_c, pred = extrapolate(fit, ratio, gg, dn)
            hdr = run.header(predicted_r=fit.r * ratio, power_ratio=ratio, direction=dn)
            cols_out = [angular_to_hz(gg), n_c, pred]
            names = ["detuning_hz", "n_c", "n_m"]
            if synthetic:
                n_c_true, truth = cooling_model(params, ratio_r, gg, dn)
                dev, mism = compare_traces(n_c_true, truth, n_c, pred, params.cavity.kerr, fit.kerr)
                hdr.update(max_rel_dev_vs_forward_model=dev, branch_mismatch_points=mism)
                cols_out.append(truth)
                names.append("n_m_forward_model")
            run.write(f"predict_r{_tag(ratio_r)}_{dn}.csv",
                      lambda p: write_csv(p, names, zip(*cols_out), header=hdr))


def _single(run: Run, section: str = "fit") -> Path:
    paths = _inputs(run, section)
    if len(paths) != 1:
        raise ConfigError(f"expected exactly one input file, got {len(paths)}", key=f"{section}.input")
    return paths[0]


def cmd_fit(run: Run) -> None:
    kind = run.choice("fit", "kind", FIT_KINDS, "circle")
    synthetic = run.bool("fit", "synthetic", False)
    if not synthetic and not _inputs(run):
        raise ConfigError("fit.input is required unless fit.synthetic = true", key="fit.input")
    {"circle": _fit_circle, "kerr-circle": _fit_kerr, "mech": _fit_mech, "g0-ramp": _fit_g0,
     "relaxation": _fit_relaxation, "cooling": _fit_cooling}[kind](run, synthetic)


def cmd_calibrate(run: Run) -> None:
    """g0 from a temperature ramp, then T_eff and n_th from a measured ``g0²·n_m``."""
    from .core import thermal_occupation
    from .fitkit import calibrate_g0, infer_t_eff
    synthetic = run.bool("calibrate", "synthetic", False)
    if not synthetic and not _inputs(run, "calibrate"):
        raise ConfigError("calibrate.input is required unless calibrate.synthetic = true", key="calibrate.input")
    ramp, omega_m = _ramp(run, synthetic, "calibrate")
    cal = calibrate_g0(ramp, omega_m, t_min_fit=run.float("calibrate", "t_min_fit_k", 0.25))
    rows = [("g0_hz", angular_to_hz(cal.g0), angular_to_hz(cal.g0_stderr), "Hz"),
            ("slope", cal.slope, cal.slope_stderr, "rad^2/s^2/K")]
    if run.has("calibrate", "g0_sq_n_m_hz2"):
        y = run.float("calibrate", "g0_sq_n_m_hz2") * (2 * math.pi) ** 2
        t_eff = infer_t_eff(cal.g0, y, omega_m)
        rows += [("t_eff_k", t_eff, None, "K"), ("n_th", thermal_occupation(t_eff, omega_m), None, "")]
    hdr = run.header(n_used=cal.n_used, excluded_temperatures_k=" ".join(repr(t) for t in cal.excluded_temperatures))
    run.write("calibrate.csv", lambda p: write_csv(p, ["parameter", "value", "stderr", "unit"], rows, header=hdr))


HANDLERS = {"steady": cmd_steady, "spectrum": cmd_spectrum, "rates": cmd_rates, "cooling-trace": cmd_cooling_trace,
            "fit": cmd_fit, "oracle": cmd_oracle, "calibrate": cmd_calibrate}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting values given earlier
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", metavar="PATH", default=d(None), help="INI config file")
    p.add_argument("--out", metavar="DIR", default=d("."), help="output directory (default: .)")
    p.add_argument("--seed", type=int, default=d(None), help="seed for synthetic data (default 0)")
    p.add_argument("--jobs", type=int, default=d(1), help="worker threads; never changes output bytes")
    p.add_argument("--format", choices=("csv",), default=d("csv"), help="output format")
    p.add_argument("--set", action="append", default=d([]), metavar="SECTION.KEY=VALUE",
                   help="config value; the config file wins on conflict (with a warning)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optokerr", description="Kerr cavity optomechanics toolkit.")
    _add_common(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {"steady": "steady-state branches over a detuning grid",
             "spectrum": "photon-number spectra per Kerr value and branch",
             "rates": "Stokes/anti-Stokes rates along a detuning sweep",
             "cooling-trace": "branch-resolved backaction traces",
             "fit": "fit measured or synthetic traces",
             "oracle": "linearized vs Lindblad spectrum comparison",
             "calibrate": "g0 temperature-ramp calibration and bath temperature"}
    for name in COMMANDS:
        _add_common(sub.add_parser(name, help=helps[name]), suppress=True)
    return parser


def resolve_config(config: Optional[str], sets: Sequence[str], seed: Optional[int]) -> configparser.ConfigParser:
    cp = read_config(config) if config else read_config("\n")
    lines = getattr(cp, "_optokerr_lines", {})
    overrides = []
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        overrides.append((section.strip(), key.strip().lower(), value.strip()))
    if seed is not None:
        overrides.append(("run", "seed", str(seed)))
    for section, key, value in overrides:
        if cp.has_option(section, key):
            if cp.get(section, key).strip() != value:
                warnings.warn(f"{section}.{key}: config file value {cp.get(section, key).strip()!r} "
                              f"wins over command line {value!r}", stacklevel=2)
            continue
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    if not cp.has_option("run", "seed"):
        if not cp.has_section("run"):
            cp.add_section("run")
        cp.set("run", "seed", "0")
    try:
        int(cp.get("run", "seed"))
    except ValueError:
        raise ConfigError("seed must be an integer", line=lines.get(("run", "seed")), key="run.seed") from None
    cp._optokerr_lines = lines  # noqa: SLF001
    return cp


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, ConvergenceError):
        return EXIT_CONVERGENCE
    if isinstance(exc, InstabilityError):
        return EXIT_INSTABILITY
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cp = resolve_config(args.config, args.set, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cp, out, args.jobs)
        with open(out / "run.ini", "w") as fh:
            fh.write(f"# optokerr {__version__} {args.command}\n")
            cp.write(fh)
        HANDLERS[args.command](run)
    except (OptoKerrError, ValueError, OSError) as exc:
        print(f"optokerr {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    for p in run.written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
