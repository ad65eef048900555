"""Mechanical sideband fits and the thermal g0 calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.constants import hbar, k as k_B
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from ..core import TWO_PI, ConvergenceError, ValidationError
from .traces import FitReport, PsdTrace, check_covariance, covariance_from_jacobian

MIN_SNR = 3.0
SECOND_PEAK_FRACTION = 0.1
DEFAULT_T_MIN_FIT = 0.250  # K; colder points do not thermalize
MIN_RAMP_POINTS = 4


@dataclass(frozen=True, eq=False)
class SidebandFit:
    """Lorentzian sideband: ``area`` is ∝ g0²⟨n_m⟩ in PSD units × Hz."""
    area: float
    omega_m: float
    gamma_m: float
    amplitude: float
    offset: float
    snr: float
    covariance: np.ndarray
    names: tuple = ("amplitude", "center_hz", "fwhm_hz", "offset")

    @property
    def stderr(self) -> dict:
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))))

    @property
    def area_stderr(self) -> float:
        # area = (π/2)·A·Γ; propagate through (A, Γ)
        g = np.array([math.pi / 2 * self.gamma_m / TWO_PI, 0.0, math.pi / 2 * self.amplitude, 0.0])
        return float(math.sqrt(max(g @ self.covariance @ g, 0.0)))

    def report(self) -> FitReport:
        e = self.stderr
        return FitReport(rows=[("area", self.area, self.area_stderr, "psd*Hz"),
                               ("omega_m", self.omega_m, TWO_PI * e["center_hz"], "rad/s"),
                               ("gamma_m", self.gamma_m, TWO_PI * e["fwhm_hz"], "rad/s"),
                               ("amplitude", self.amplitude, e["amplitude"], "psd"),
                               ("offset", self.offset, e["offset"], "psd")],
                         meta={"snr": self.snr})


def lorentzian_psd(freq_hz, amplitude, center_hz, fwhm_hz, offset):
    """Peak-normalized Lorentzian ``A·(Γ/2)²/((f − f_m)² + (Γ/2)²)`` on a flat background."""
    hw = 0.5 * fwhm_hz
    return offset + amplitude * hw * hw / ((np.asarray(freq_hz) - center_hz) ** 2 + hw * hw)


def _robust_noise(x: np.ndarray) -> float:
    return float(1.4826 * np.median(np.abs(x - np.median(x))))


def mech_sideband_fit(psd: PsdTrace, min_snr: float = MIN_SNR) -> SidebandFit:
    """Fit offset + Lorentzian to a sideband PSD.

    Raises ValidationError for a peak SNR below ``min_snr`` or when more
    than one peak is present (checked on the data and on the fit residual).
    """
    f, s = psd.freq_hz, psd.psd
    if f.size < 10:
        raise ValidationError([("freq_hz", f.size, "need at least 10 points")])
    base = float(np.median(s))
    noise = _robust_noise(s)
    # peak height is read off a lightly smoothed copy so that single noise spikes do not count as signal
    width = max(int(f.size // 200), 1)
    smooth = uniform_filter1d(s, size=2 * width + 1, mode="nearest")
    i0 = int(np.argmax(smooth))
    height = float(smooth[i0] - base)
    snr = height / noise if noise > 0 else math.inf
    if not snr >= min_snr:
        raise ValidationError([("psd", snr, f"peak SNR {snr:.2f} below {min_snr:g}")])

    peaks, props = find_peaks(smooth, prominence=max(SECOND_PEAK_FRACTION * height, 5.0 * noise))
    if peaks.size > 1:
        raise ValidationError([("psd", int(peaks.size), "multiple peaks detected")])

    # initial width from the half-maximum crossing around the peak
    half = base + 0.5 * height
    lo = i0
    while lo > 0 and smooth[lo] > half:
        lo -= 1
    hi = i0
    while hi < f.size - 1 and smooth[hi] > half:
        hi += 1
    fwhm0 = max(f[hi] - f[lo], f[1] - f[0])
    f_ref = f[i0]
    scale = np.array([height, fwhm0, fwhm0, max(abs(base), noise, 1e-300)])

    def solve(y0, weight):
        def resid(y):
            A, dc, w, off = y * scale
            return (lorentzian_psd(f - f_ref, A, dc, w, off) - s) / weight

        sol = least_squares(resid, y0, method="trf", x_scale="jac", ftol=1e-15, xtol=1e-15, gtol=1e-15,
                            max_nfev=2000)
        if sol.status <= 0:
            raise ConvergenceError(f"sideband fit did not converge: {sol.message}")
        return sol

    # averaged periodograms scatter in proportion to the spectrum itself,
    # so refit with weights from the first-pass model
    weight = np.full(f.size, scale[0])
    sol = solve(np.array([height, 0.0, fwhm0, base]) / scale, weight)
    for _ in range(2):
        A, dc, w, off = sol.x * scale
        model = lorentzian_psd(f - f_ref, A, dc, w, off)
        if not np.all(model > 0):
            break
        weight = model
        sol = solve(sol.x, weight)
    A, dc, w, off = sol.x * scale
    w = abs(w)
    r = sol.fun
    k = 2 * width + 1
    r_smooth = uniform_filter1d(r, size=k, mode="nearest")
    floor = max(5.0 * _robust_noise(r) / math.sqrt(k), 1e-6 * float(np.max(np.abs(scale[0] / weight))))
    if np.max(np.abs(r_smooth)) > floor:
        raise ValidationError([("psd", None, "multiple peaks detected")])
    J = sol.jac / scale
    cov = check_covariance(covariance_from_jacobian(J, r))
    area = 0.5 * math.pi * A * w
    return SidebandFit(area=float(area), omega_m=float(TWO_PI * (f_ref + dc)), gamma_m=float(TWO_PI * w),
                       amplitude=float(A), offset=float(off), snr=float(snr), covariance=cov)


def synthetic_psd(freq_hz, area, omega_m, gamma_m, offset, averages: Optional[int] = None, rng=None) -> np.ndarray:
    """Forward-model PSD; with ``averages`` each bin is a Gamma-distributed average of periodograms."""
    fwhm = gamma_m / TWO_PI
    amplitude = 2.0 * area / (math.pi * fwhm)
    s = lorentzian_psd(freq_hz, amplitude, omega_m / TWO_PI, fwhm, offset)
    if averages:
        rng = np.random.default_rng(rng)
        s = s * rng.gamma(averages, 1.0 / averages, size=s.shape)
    return s


# ---------------------------------------------------------------------------
# g0 calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class G0Calibration:
    g0: float
    g0_stderr: float
    slope: float
    slope_stderr: float
    omega_m: float
    n_used: int
    excluded_temperatures: Tuple[float, ...] = ()

    def report(self) -> FitReport:
        return FitReport(rows=[("g0", self.g0, self.g0_stderr, "rad/s"),
                               ("slope", self.slope, self.slope_stderr, "rad^2/s^2/K")],
                         meta={"n_used": self.n_used,
                               "excluded_temperatures_k": " ".join(repr(t) for t in self.excluded_temperatures)})


def calibrate_g0(ramp: Sequence[Tuple[float, float]], omega_m: float, sigma: Optional[Sequence[float]] = None,
                 t_min_fit: float = DEFAULT_T_MIN_FIT) -> G0Calibration:
    """g0 from ``g0²·n_m`` measured against bath temperature.

    ``ramp`` holds ``(T in K, g0²·n_m in rad²/s²)`` pairs. With
    ``n_th = k_B·T/ħω_m`` the data follow ``y = slope·T`` through the origin,
    so ``g0 = sqrt(slope·ħω_m/k_B)``. Points below ``t_min_fit`` are
    reported and excluded. The result does not depend on input order.
    """
    data = np.asarray(ramp, dtype=float).reshape(-1, 2)
    sig = np.ones(len(data)) if sigma is None else np.asarray(sigma, dtype=float)
    if sig.shape != (len(data),) or np.any(sig <= 0):
        raise ValidationError([("sigma", None, "sigma must be positive, one per point")])
    order = np.lexsort((sig, data[:, 1], data[:, 0]))
    data, sig = data[order], sig[order]
    T, y = data[:, 0], data[:, 1]
    use = T >= t_min_fit
    if use.sum() < MIN_RAMP_POINTS:
        raise ValidationError([("ramp", int(use.sum()),
                                f"insufficient thermalized points: {int(use.sum())} at T >= {t_min_fit:g} K, "
                                f"need {MIN_RAMP_POINTS}")])
    Tu, yu, w = T[use], y[use], 1.0 / sig[use] ** 2
    sxx = float(np.sum(w * Tu * Tu))
    slope = float(np.sum(w * Tu * yu)) / sxx
    if not slope > 0:
        raise ValidationError([("slope", slope, "negative slope: g0² n_m must grow with temperature")])
    dof = max(int(use.sum()) - 1, 1)
    chi2 = float(np.sum(w * (yu - slope * Tu) ** 2)) / dof
    var = 1.0 / sxx * (chi2 if sigma is None else max(chi2, 1.0))
    slope_err = math.sqrt(var)
    g0 = math.sqrt(slope * hbar * omega_m / k_B)
    g0_err = 0.5 * g0 * slope_err / slope
    return G0Calibration(g0=g0, g0_stderr=g0_err, slope=slope, slope_stderr=slope_err, omega_m=omega_m,
                         n_used=int(use.sum()), excluded_temperatures=tuple(float(t) for t in T[~use]))


def infer_t_eff(g0: float, g0_sq_n_m: float, omega_m: float) -> float:
    """Effective mechanical bath temperature (K) from a measured ``g0²·n_m`` and calibrated g0."""
    if not g0 > 0:
        raise ValidationError([("g0", g0, "g0 must be > 0")])
    return g0_sq_n_m / g0**2 * hbar * omega_m / k_B


def synthetic_ramp(temperatures, g0: float, omega_m: float, t_floor: float = DEFAULT_T_MIN_FIT,
                   rel_noise: float = 0.0, rng=None):
    """``(T, g0²·n_m)`` pairs; below ``t_floor`` the mode stays at ``t_floor`` (no thermalization)."""
    T = np.asarray(temperatures, dtype=float)
    t_mode = np.maximum(T, t_floor)
    y = g0**2 * k_B * t_mode / (hbar * omega_m)
    if rel_noise:
        y = y * (1.0 + rel_noise * np.random.default_rng(rng).standard_normal(y.shape))
    return list(zip(T, y))
