"""Fit a low-power cooling trace and extrapolate it to higher drive powers."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from ..backaction import quantum_noise_arrays
from ..core import ConvergenceError, SystemParams, ValidationError, validate
from ..steadystate import SQRT3
from .traces import FitReport, check_covariance, covariance_from_jacobian

FIT_NAMES = ("kerr", "r", "n_th")
SAME_BRANCH_RTOL = 0.2


@dataclass(frozen=True, eq=False)
class CoolingFit:
    """Fitted Kerr constant (rad/s), drive ratio and bath occupation; ``g0`` held fixed."""
    params: SystemParams
    r: float
    direction: str
    covariance: np.ndarray
    names: Tuple[str, ...]
    residual_rms: float

    @property
    def kerr(self) -> float:
        return self.params.cavity.kerr

    @property
    def n_th(self) -> float:
        return self.params.mech.n_th

    @property
    def drive_term(self) -> float:
        return self.r * self.params.cavity.kappa**3 / (3.0 * SQRT3 * self.kerr)

    @property
    def stderr(self) -> dict:
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))))

    def report(self) -> FitReport:
        e = self.stderr
        units = {"kerr": "rad/s", "r": "1", "n_th": "1"}
        values = {"kerr": self.kerr, "r": self.r, "n_th": self.n_th}
        return FitReport(rows=[(k, values[k], e.get(k), units[k]) for k in FIT_NAMES],
                         meta={"direction": self.direction, "residual_rms": self.residual_rms})


def _with(params: SystemParams, kerr: float, n_th: float) -> SystemParams:
    return replace(params, cavity=replace(params.cavity, kerr=kerr), mech=replace(params.mech, n_th=n_th))


def cooling_model(params: SystemParams, r: float, detunings, direction: str):
    """``(n_c, n_m)`` along a sweep with drive ratio ``r`` relative to ``params.cavity.kerr``."""
    kappa, K = params.cavity.kappa, params.cavity.kerr
    F = r * kappa**3 / (3.0 * SQRT3 * K)
    n_c, n_m, _ = quantum_noise_arrays(params, F, detunings, direction)
    return n_c, n_m


def cooling_trace_fit(detunings: Sequence[float], n_m: Sequence[float], params0: SystemParams, r0: float,
                      direction: str = "up", free: Sequence[str] = FIT_NAMES,
                      sigma: Optional[Sequence[float]] = None) -> CoolingFit:
    """Fit ``(K, r, n_th)`` to a measured phonon-occupation trace.

    ``detunings`` (rad/s) must be in sweep order. ``g0`` and the cavity and
    mechanical linewidths come from ``params0`` and stay fixed; parameters
    not listed in ``free`` are held at their starting values. Residuals are
    relative, so ``sigma`` (if given) is a relative uncertainty per point.
    """
    params0 = validate(params0)
    d = np.asarray(detunings, dtype=float)
    y = np.asarray(n_m, dtype=float)
    if d.shape != y.shape or d.ndim != 1:
        raise ValidationError([("n_m", None, "detunings and n_m must be 1-D of equal length")])
    use = np.isfinite(y)
    if use.sum() < 5:
        raise ValidationError([("n_m", int(use.sum()), "need at least 5 finite points")])
    if np.any(y[use] <= 0):
        raise ValidationError([("n_m", None, "n_m must be > 0")])
    if not params0.cavity.kerr > 0 or not r0 > 0:
        raise ValidationError([("kerr", params0.cavity.kerr, "starting kerr and r must be > 0")])
    bad = [f for f in free if f not in FIT_NAMES]
    if bad:
        raise ValidationError([("free", bad, f"free parameters must be among {FIT_NAMES}")])
    free = tuple(f for f in FIT_NAMES if f in free)
    sig = np.ones(d.size) if sigma is None else np.asarray(sigma, dtype=float)
    start = {"kerr": params0.cavity.kerr, "r": r0, "n_th": max(params0.mech.n_th, 1e-3)}

    def unpack(x):
        v = dict(start)
        for name, xi in zip(free, x):
            v[name] = start[name] * math.exp(xi)
        return v

    def resid(x):
        v = unpack(x)
        _, m = cooling_model(_with(params0, v["kerr"], v["n_th"]), v["r"], d, direction)
        r = (m[use] / y[use] - 1.0) / sig[use]
        # unstable points get a large finite penalty so the optimizer backs off
        return np.where(np.isfinite(r), r, 1e3)

    sol = least_squares(resid, np.zeros(len(free)), method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                        max_nfev=2000)
    if sol.status <= 0:
        raise ConvergenceError(f"cooling trace fit did not converge: {sol.message}")
    v = unpack(sol.x)
    # covariance in natural units: x are log-parameters, so scale by the values
    scale = np.array([v[n] for n in free])
    cov = check_covariance(covariance_from_jacobian(sol.jac, sol.fun, scale=sigma is None) * np.outer(scale, scale))
    return CoolingFit(params=_with(params0, v["kerr"], v["n_th"]), r=v["r"], direction=direction,
                      covariance=cov, names=free, residual_rms=float(np.sqrt(np.mean(sol.fun**2))))


def extrapolate(fit: CoolingFit, power_ratio: float, detunings, direction: str):
    """Predicted ``(n_c, n_m)`` at ``power_ratio`` times the fitted drive power."""
    if not power_ratio > 0:
        raise ValidationError([("power_ratio", power_ratio, "power ratio must be > 0")])
    return cooling_model(fit.params, fit.r * power_ratio, detunings, direction)


def compare_traces(n_c_a, n_m_a, n_c_b, n_m_b, kerr_a: float, kerr_b: float) -> Tuple[float, int]:
    """Max relative ``n_m`` deviation over points both traces put on the same branch.

    Returns ``(max_rel_dev, n_branch_mismatch)``; points whose Kerr shifts
    ``K·n_c`` differ by more than 20% sit on different branches.
    """
    sa, sb = kerr_a * np.asarray(n_c_a), kerr_b * np.asarray(n_c_b)
    a, b = np.asarray(n_m_a), np.asarray(n_m_b)
    same = np.abs(sb / sa - 1.0) < SAME_BRANCH_RTOL
    ok = same & np.isfinite(a) & np.isfinite(b)
    dev = float(np.max(np.abs(b[ok] / a[ok] - 1.0))) if ok.any() else math.nan
    return dev, int((~same).sum())
