"""Exponential relaxation of the slow cavity frequency shift, single or joint over traces."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from ..core import ConvergenceError, ValidationError
from .traces import FitReport, check_covariance, covariance_from_jacobian

MIN_SAMPLES = 10
MIN_DECAYS = 2.0


@dataclass(frozen=True, eq=False)
class RelaxationFit:
    """``δf(t) = offset + δf0·exp(−t/τ)``; per-trace ``delta_f0``/``offset`` for joint fits."""
    delta_f0: Tuple[float, ...]
    tau_relax: float
    offset: Tuple[float, ...]
    residual_norm: float
    tau_stderr: float
    delta_f0_stderr: Tuple[float, ...]
    identifiable: bool = True
    covariance: np.ndarray = None

    def report(self) -> FitReport:
        rows = [("tau_relax", self.tau_relax if self.identifiable else math.nan,
                 self.tau_stderr if self.identifiable else None, "s")]
        for i, (a, e, c) in enumerate(zip(self.delta_f0, self.delta_f0_stderr, self.offset)):
            rows.append((f"delta_f0[{i}]", a, e, "Hz"))
            rows.append((f"offset[{i}]", c, None, "Hz"))
        return FitReport(rows=rows, meta={"residual_norm": self.residual_norm,
                                          "tau_identifiable": self.identifiable})


def _check_series(series) -> List[Tuple[np.ndarray, np.ndarray]]:
    out = []
    for t, y in series:
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise ValidationError([("series", None, "time and shift arrays must be 1-D of equal length")])
        if t.size < MIN_SAMPLES:
            raise ValidationError([("series", t.size, f"need at least {MIN_SAMPLES} samples per trace")])
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValidationError([("series", None, "series contains non-finite values")])
        out.append((t, y))
    if not out:
        raise ValidationError([("series", 0, "no traces given")])
    return out


def relaxation_fit(series: Sequence[Tuple[Sequence[float], Sequence[float]]], joint: bool = True) -> RelaxationFit:
    """Fit exponential decays to one or more ``(t, δf)`` series.

    With ``joint=True`` all traces share τ; amplitude and offset are free per
    trace. If every amplitude is consistent with zero, τ is reported as
    unidentifiable instead of raising. A τ pinned at its search bound raises
    ConvergenceError.
    """
    data = _check_series(series)
    if not joint and len(data) > 1:
        raise ValidationError([("series", len(data), "use joint=True or fit traces one at a time")])
    t_all = np.concatenate([t for t, _ in data])
    span = float(np.ptp(t_all))
    dt = float(np.min([np.min(np.diff(np.sort(t))) for t, _ in data]))
    tau_lo, tau_hi = max(dt / 10.0, 1e-12 * span), 100.0 * span
    m = len(data)
    yscale = max(max(float(np.ptp(y)) for _, y in data), 1e-300)

    def unpack(p):
        return p[0], p[1:1 + m], p[1 + m:]

    def resid(p):
        ltau, amps, offs = unpack(p)
        tau = math.exp(ltau)
        return np.concatenate([(o + a * np.exp(-(t - t[0]) / tau) - y) / yscale
                               for (t, y), a, o in zip(data, amps, offs)])

    best = None
    for frac in (0.1, 0.3, 1.0):
        tau0 = frac * span
        amps0 = [(y[0] - y[-1]) / yscale for _, y in data]
        offs0 = [y[-1] / yscale for _, y in data]
        p0 = np.array([math.log(tau0)] + amps0 + offs0)

        def r_scaled(p):
            q = p.copy()
            q[1:] *= yscale
            return resid(q)

        lb = np.full(p0.size, -np.inf)
        ub = np.full(p0.size, np.inf)
        lb[0], ub[0] = math.log(tau_lo), math.log(tau_hi)
        sol = least_squares(r_scaled, p0, bounds=(lb, ub), method="trf", x_scale="jac",
                            ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=5000)
        if sol.status <= 0:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise ConvergenceError("relaxation fit did not converge")
    p = best.x.copy()
    p[1:] *= yscale
    ltau, amps, offs = unpack(p)
    tau = math.exp(ltau)
    r = best.fun * yscale
    # covariance in (τ, amplitudes, offsets)
    J = best.jac * yscale
    J[:, 1:] /= yscale
    J[:, 0] /= tau  # d/dτ = (1/τ)·d/dlnτ
    cov = check_covariance(covariance_from_jacobian(J, r))
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    # amplitudes referenced to each trace's first sample; restate at t = 0
    amps_t0 = tuple(float(a * math.exp(t[0] / tau)) for (t, _), a in zip(data, amps))
    amp_err = tuple(float(e * math.exp(t[0] / tau)) for (t, _), e in zip(data, err[1:1 + m]))
    noise = float(np.sqrt(np.sum(r**2) / max(r.size - p.size, 1)))
    identifiable = any(abs(a) > 3.0 * max(e, noise * 1e-12) and abs(a) > 1e-12 * yscale
                       for a, e in zip(amps, err[1:1 + m]))
    if identifiable:
        if ltau <= math.log(tau_lo) + 1e-6 or ltau >= math.log(tau_hi) - 1e-6:
            raise ConvergenceError(f"relaxation time at parameter bound ({tau:.3g} s)")
        if span < MIN_DECAYS * tau:
            warnings.warn(f"series spans {span / tau:.2f} decay constants, fewer than {MIN_DECAYS:g}",
                          stacklevel=2)
    return RelaxationFit(delta_f0=amps_t0, tau_relax=tau, offset=tuple(float(o) for o in offs),
                         residual_norm=float(np.linalg.norm(r)), tau_stderr=float(err[0]),
                         delta_f0_stderr=amp_err, identifiable=bool(identifiable), covariance=cov)


def synthetic_relaxation(t, delta_f0: float, tau: float, offset: float = 0.0, noise: float = 0.0, rng=None):
    t = np.asarray(t, dtype=float)
    y = offset + delta_f0 * np.exp(-t / tau)
    if noise:
        y = y + noise * np.random.default_rng(rng).standard_normal(t.shape)
    return y
