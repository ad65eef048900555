r"""
Circle fits of notch-type (hanger) resonator transmission.

.. math::

    S_{21}(\omega) = a e^{i\alpha} e^{-i\tau\omega}
        \left(1 - \frac{(Q_l/|Q_c|)\,e^{i\phi_0}}{1 + 2iQ_l(\omega - \omega_c)/\omega}\right)

The linear fit is initialized by delay removal, an algebraic circle fit and
a phase fit around the circle centre, then refined by trust-region least
squares over all seven parameters with an analytic Jacobian. Internally the
environment phase is referenced to a frequency inside the scan so that it
decorrelates from the delay.

The Kerr variant replaces ω_c by ω_c − K n_c, with n_c from

.. math::

    n_c[(\omega_c - K n_c - \omega)^2 + (\omega_c/2Q_l)^2]
        = \frac{\omega_c}{2|Q_c|}\frac{P_g}{\hbar\omega}\cdot\frac{1}{2},

solved on the branch selected by each trace's sweep direction.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.constants import hbar
from scipy.optimize import least_squares, minimize_scalar

from ..core import TWO_PI, ConvergenceError, ValidationError
from ..steadystate import C_CRIT, branch_photon_numbers, cubic_roots
from .traces import FitReport, S21Trace, check_covariance, covariance_from_jacobian

LINEAR_NAMES = ("a", "alpha_env", "tau_delay", "Q_l", "Q_c_mag", "phi_0", "omega_c")
MIN_POINTS = 50
MIN_LINEWIDTHS = 5.0
HANGER_INPUT_FACTOR = 0.5
SMOOTH_STAGE_MAX_RATIO = 0.7


@dataclass(frozen=True, eq=False)
class CircleFitParams:
    a: float
    alpha_env: float
    tau_delay: float
    Q_l: float
    Q_c_mag: float
    phi_0: float
    omega_c: float
    kerr: Optional[float] = None
    covariance: Optional[np.ndarray] = None
    names: tuple = LINEAR_NAMES
    residual_rms: float = 0.0
    kerr_range: Optional[tuple] = None
    attenuation_offsets_db: Optional[tuple] = None
    branch_jumps: Optional[list] = None

    @property
    def stderr(self) -> dict:
        if self.covariance is None:
            return {}
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))))

    @property
    def kappa(self) -> float:
        return self.omega_c / self.Q_l

    @property
    def Q_i(self) -> float:
        """Internal quality factor, ``1/Q_i = 1/Q_l − cos φ₀/|Q_c|`` (inf if not positive)."""
        inv = 1.0 / self.Q_l - math.cos(self.phi_0) / self.Q_c_mag
        return 1.0 / inv if inv > 0 else math.inf

    def report(self) -> FitReport:
        err = self.stderr
        units = {"a": "", "alpha_env": "rad", "tau_delay": "s", "Q_l": "", "Q_c_mag": "", "phi_0": "rad",
                 "omega_c": "rad/s", "kerr": "rad/s"}
        rows = [(n, getattr(self, n), err.get(n), units[n]) for n in LINEAR_NAMES]
        if self.kerr is not None:
            rows.append(("kerr", self.kerr, err.get("kerr"), units["kerr"]))
            if self.kerr_range is not None:
                rows.append(("kerr_at_att_minus", self.kerr_range[0], None, "rad/s"))
                rows.append(("kerr_at_att_plus", self.kerr_range[1], None, "rad/s"))
        return FitReport(rows=rows, meta={"residual_rms": self.residual_rms})


# ---------------------------------------------------------------------------
# forward models
# ---------------------------------------------------------------------------

def s21_notch(freq_hz, a, alpha_env, tau_delay, Q_l, Q_c_mag, phi_0, omega_c):
    """Linear hanger response at frequencies ``freq_hz`` (Hz)."""
    f = np.asarray(freq_hz, dtype=float)
    fc = omega_c / TWO_PI
    env = a * np.exp(1j * alpha_env) * np.exp(-1j * tau_delay * TWO_PI * f)
    return env * (1.0 - (Q_l / Q_c_mag) * np.exp(1j * phi_0) / (1.0 + 2j * Q_l * (f - fc) / f))


def kerr_drive_term(omega, power_w, Q_c_mag, omega_c):
    """Right-hand side of the Kerr cubic, with the hanger input factor 1/2."""
    return (omega_c / (2.0 * Q_c_mag)) * (power_w / (hbar * omega)) * HANGER_INPUT_FACTOR


def kerr_photon_number(freq_hz, power_w, Q_l, Q_c_mag, omega_c, kerr, direction="none"):
    """Intracavity photon number along a trace (in the given sweep order)."""
    f = np.asarray(freq_hz, dtype=float)
    omega = TWO_PI * f
    F = kerr_drive_term(omega, power_w, Q_c_mag, omega_c)
    detuning = TWO_PI * (f - omega_c / TWO_PI)
    return branch_photon_numbers(omega_c / Q_l, kerr, F, detuning, direction)


def s21_kerr(freq_hz, power_w, a, alpha_env, tau_delay, Q_l, Q_c_mag, phi_0, omega_c, kerr, direction="none"):
    """Hanger response with the resonance pulled to ``ω_c − K·n_c`` point by point."""
    n = kerr_photon_number(freq_hz, power_w, Q_l, Q_c_mag, omega_c, kerr, direction)
    f = np.asarray(freq_hz, dtype=float)
    fc = (omega_c - kerr * n) / TWO_PI
    env = a * np.exp(1j * alpha_env) * np.exp(-1j * tau_delay * TWO_PI * f)
    return env * (1.0 - (Q_l / Q_c_mag) * np.exp(1j * phi_0) / (1.0 + 2j * Q_l * (f - fc) / f))


# ---------------------------------------------------------------------------
# initialization helpers
# ---------------------------------------------------------------------------

def _algebraic_circle(z: np.ndarray):
    """Least-squares circle through complex points: ``(centre, radius, rms residual)``."""
    shift = np.mean(z)
    w = z - shift
    scale = np.max(np.abs(w))
    if not scale > 0:
        raise ValidationError([("s21", None, "degenerate circle: all points coincide")])
    w = w / scale
    x, y = w.real, w.imag
    A = np.column_stack([x, y, np.ones_like(x)])
    b = -(x * x + y * y)
    (D, E, F), *_ = np.linalg.lstsq(A, b, rcond=None)
    xc, yc = -D / 2, -E / 2
    r2 = xc * xc + yc * yc - F
    if not r2 > 0:
        raise ValidationError([("s21", None, "degenerate circle: no real radius")])
    r = math.sqrt(r2)
    rms = float(np.sqrt(np.mean((np.abs(w - (xc + 1j * yc)) - r) ** 2)))
    return shift + scale * (xc + 1j * yc), scale * r, scale * rms


def _noise_floor(z: np.ndarray) -> float:
    """Point-to-point scatter, a rough estimate of additive noise."""
    d2 = np.diff(z, n=2)
    return float(np.sqrt(np.mean(np.abs(d2) ** 2) / 6.0)) if d2.size else 0.0


def _guess_delay(f: np.ndarray, z: np.ndarray) -> float:
    phase = np.unwrap(np.angle(z))
    k = max(f.size // 10, 3)
    sel = np.r_[0:k, f.size - k:f.size]
    slope = np.polyfit(TWO_PI * (f[sel] - f[0]), phase[sel], 1)[0]
    tau0 = -slope
    span = f[-1] - f[0]

    def cost(tau):
        zz = z * np.exp(1j * TWO_PI * tau * (f - f[0]))
        _, r, rms = _algebraic_circle(zz)
        return rms / r

    res = minimize_scalar(cost, bounds=(tau0 - 0.25 / span, tau0 + 0.25 / span), method="bounded",
                          options={"xatol": 1e-6 / span})
    return float(res.x)


def _phase_fit(f: np.ndarray, zc: np.ndarray):
    """Fit ``θ(f) = θ₀ − 2·atan(2Q_l(f − f_c)/f)`` to the phase about the circle centre."""
    theta = np.unwrap(np.angle(zc))
    grad = np.gradient(theta, f)
    i0 = int(np.argmax(np.abs(grad)))
    fc0 = f[i0]
    ql0 = max(abs(grad[i0]) * fc0 / 4.0, 1.0)
    theta0 = theta[i0]

    def resid(p):
        th0, lql, dfc = p
        model = th0 - 2.0 * np.arctan(2.0 * math.exp(lql) * (f - (fc0 + dfc)) / f)
        return np.angle(np.exp(1j * (theta - model)))

    best = None
    for scale in (1.0, 0.3, 3.0):
        sol = least_squares(resid, [theta0, math.log(ql0 * scale), 0.0], method="lm",
                            x_scale=[1.0, 1.0, fc0 / (ql0 * scale)])
        if best is None or sol.cost < best.cost:
            best = sol
    th0, lql, dfc = best.x
    return th0, math.exp(lql), fc0 + dfc


def initial_guess(trace: S21Trace) -> dict:
    """Initial circle-fit parameters from delay removal, circle fit and phase fit."""
    order = np.argsort(trace.freq_hz)
    f = trace.freq_hz[order]
    z = trace.s21[order]
    tau = _guess_delay(f, z)
    zz = z * np.exp(1j * TWO_PI * tau * (f - f[0]))
    centre, radius, _ = _algebraic_circle(zz)
    noise = _noise_floor(zz)
    # a delay rotation turns any flat trace into a circle; |S21| is delay-free, so require a real dip
    dip = float(np.ptp(np.abs(z)))
    if not (radius > 3.0 * noise and dip > 10.0 * noise):
        raise ValidationError([("s21", radius, f"degenerate circle: radius {radius:.3g} below noise floor "
                                               f"{noise:.3g}")])
    theta0, Q_l, fc = _phase_fit(f, zz - centre)
    p_off = centre + radius * np.exp(1j * (theta0 + math.pi))
    a = abs(p_off)
    alpha_ref = float(np.angle(p_off))
    cn = centre / p_off
    d = 2.0 * abs(1.0 - cn)
    phi0 = float(np.angle(1.0 - cn))
    # the stripped delay was referenced to f[0]; restate the phase for the e^{−iτω} convention
    alpha = alpha_ref + tau * TWO_PI * f[0]
    return {"a": a, "alpha_env": alpha, "tau_delay": tau, "Q_l": Q_l, "Q_c_mag": Q_l / d, "phi_0": phi0,
            "omega_c": TWO_PI * fc}


def _wrap(x: float) -> float:
    return float(math.remainder(x, TWO_PI))


# ---------------------------------------------------------------------------
# linear fit
# ---------------------------------------------------------------------------

class _LinearProblem:
    """Residuals and Jacobian in the internal parametrization
    ``x = (a, α_ref, τ, Q_l, Q_c, φ₀, δf_c)``, with ``α_ref = α − τ·ω_ref``
    and ``f_c = f_ref + δf_c``."""

    def __init__(self, f, z, f_ref):
        self.f = f
        self.z = z
        self.f_ref = f_ref
        self.df = f - f_ref

    def to_internal(self, p: dict) -> np.ndarray:
        return np.array([p["a"], p["alpha_env"] - p["tau_delay"] * TWO_PI * self.f_ref, p["tau_delay"],
                         p["Q_l"], p["Q_c_mag"], p["phi_0"], p["omega_c"] / TWO_PI - self.f_ref])

    def parts(self, x):
        a, al, tau, ql, qc, phi, dfc = x
        env = a * np.exp(1j * (al - tau * TWO_PI * self.df))
        den = 1.0 + 2j * ql * (self.df - dfc) / self.f
        frac = (ql / qc) * np.exp(1j * phi) / den
        return env, den, frac

    def model(self, x):
        env, _, frac = self.parts(x)
        return env * (1.0 - frac)

    def residuals(self, x):
        r = self.model(x) - self.z
        return np.concatenate([r.real, r.imag])

    def jacobian(self, x):
        a, al, tau, ql, qc, phi, dfc = x
        env, den, frac = self.parts(x)
        m = env * (1.0 - frac)
        cols = [
            m / a,
            1j * m,
            -1j * TWO_PI * self.df * m,
            -env * frac / (ql * den),               # ∂/∂Q_l of −(Q_l/Q_c)e^{iφ}/den
            env * frac / qc,
            -1j * env * frac,
            -env * frac * (2j * ql / self.f) / den,  # ∂den/∂δf_c = −2iQ_l/f
        ]
        J = np.column_stack(cols)
        return np.vstack([J.real, J.imag])

    def output_jacobian(self, x):
        """d(output params)/d(internal params) for covariance transformation."""
        T = np.eye(7)
        T[1, 2] = TWO_PI * self.f_ref
        T[6, 6] = TWO_PI
        return T

    def to_output(self, x) -> dict:
        a, al, tau, ql, qc, phi, dfc = x
        return {"a": float(a), "alpha_env": _wrap(al + tau * TWO_PI * self.f_ref), "tau_delay": float(tau),
                "Q_l": float(ql), "Q_c_mag": float(qc), "phi_0": _wrap(phi),
                "omega_c": float(TWO_PI * (self.f_ref + dfc))}


def _solve(fun, jac, x0, max_nfev):
    sol = least_squares(fun, x0, jac=jac, method="trf", x_scale="jac", ftol=1e-15, xtol=1e-15, gtol=1e-15,
                        max_nfev=max_nfev)
    if sol.status <= 0:
        raise ConvergenceError(f"least squares did not converge after {sol.nfev} evaluations: {sol.message}")
    return sol


def circle_fit_linear(trace: S21Trace, guess: Optional[dict] = None, max_nfev: int = 2000) -> CircleFitParams:
    """Seven-parameter hanger circle fit with covariance.

    Requires ≥ 50 points spanning ≥ 5 linewidths.
    """
    f, z = trace.freq_hz, trace.s21
    if f.size < MIN_POINTS:
        raise ValidationError([("freq_hz", f.size, f"need at least {MIN_POINTS} points")])
    p0 = guess or initial_guess(trace)
    span = abs(f[-1] - f[0])
    linewidth = p0["omega_c"] / TWO_PI / p0["Q_l"]
    if span < MIN_LINEWIDTHS * linewidth:
        raise ValidationError([("freq_hz", span, f"trace spans {span / linewidth:.2f} linewidths, "
                                                 f"need at least {MIN_LINEWIDTHS:g}")])
    prob = _LinearProblem(f, z, p0["omega_c"] / TWO_PI)
    sol = _solve(prob.residuals, prob.jacobian, prob.to_internal(p0), max_nfev)
    out = prob.to_output(sol.x)
    if out["Q_l"] <= 0 or out["Q_c_mag"] <= 0:
        raise ConvergenceError(f"fit converged to unphysical quality factors Q_l={out['Q_l']}, "
                               f"|Q_c|={out['Q_c_mag']}")
    T = prob.output_jacobian(sol.x)
    cov = check_covariance(T @ covariance_from_jacobian(sol.jac, sol.fun) @ T.T)
    rms = float(np.sqrt(np.mean(sol.fun**2) * 2.0))
    res = CircleFitParams(**out, covariance=cov, residual_rms=rms)
    if not math.isinf(res.Q_i) and res.Q_i < 0:
        warnings.warn("fitted Q_l exceeds |Q_c|/cos(phi_0)", stacklevel=2)
    return res


def circle_fit_residuals(trace: S21Trace, fit: CircleFitParams) -> np.ndarray:
    vals = {n: getattr(fit, n) for n in LINEAR_NAMES}
    if fit.kerr is None:
        return trace.s21 - s21_notch(trace.freq_hz, **vals)
    return trace.s21 - s21_kerr(trace.freq_hz, trace.power_at_cavity(), kerr=fit.kerr,
                                direction=_effective_direction(trace), **vals)


# ---------------------------------------------------------------------------
# Kerr fit
# ---------------------------------------------------------------------------

def _effective_direction(trace: S21Trace) -> str:
    if trace.direction != "none":
        return trace.direction
    return "up" if trace.freq_hz.size < 2 or trace.freq_hz[-1] > trace.freq_hz[0] else "down"


def _bistable_points(trace: S21Trace, p: dict, kerr: float, offset_db: float) -> np.ndarray:
    f = trace.freq_hz
    omega = TWO_PI * f
    kappa = p["omega_c"] / p["Q_l"]
    F = kerr_drive_term(omega, trace.power_at_cavity(offset_db), p["Q_c_mag"], p["omega_c"])
    _, mult = cubic_roots((omega - p["omega_c"]) / kappa, kerr * F / kappa**3)
    return (mult > 0).sum(axis=1) > 1


def _drive_ratio(trace: S21Trace, p: dict, kerr: float, offset_db: float) -> float:
    """Largest drive along the trace in units of the critical drive."""
    kappa = p["omega_c"] / p["Q_l"]
    F = kerr_drive_term(TWO_PI * trace.freq_hz, trace.power_at_cavity(offset_db), p["Q_c_mag"], p["omega_c"])
    return float(abs(kerr) * np.max(F) / kappa**3 / C_CRIT)


class _KerrProblem:
    """Joint residuals over several traces; parameters ``(linear internal..., K/2π)``."""

    def __init__(self, traces: Sequence[S21Trace], f_ref: float, offset_db: float):
        self.traces = list(traces)
        self.f_ref = f_ref
        self.powers = [t.power_at_cavity(offset_db) for t in traces]
        self.dirs = [_effective_direction(t) for t in traces]

    def photon_numbers(self, x, j, frozen=None):
        """Photon numbers along trace ``j``; ``frozen`` pins the root (True = largest) per point."""
        t = self.traces[j]
        a, al, tau, ql, qc, phi, dfc, khz = x
        f = t.freq_hz
        omega_c = TWO_PI * (self.f_ref + dfc)
        kappa = omega_c / ql
        kerr = TWO_PI * khz
        F = kerr_drive_term(TWO_PI * f, self.powers[j], qc, omega_c)
        detuning = TWO_PI * ((f - self.f_ref) - dfc)
        if frozen is None or kerr == 0:
            return branch_photon_numbers(kappa, kerr, F, detuning, self.dirs[j])
        roots, mult = cubic_roots(detuning / kappa, kerr * F / kappa**3)
        ns = np.sort(roots * kappa / kerr, axis=1)
        count = (mult > 0).sum(axis=1)
        hi = ns[np.arange(f.size), count - 1]
        return np.where(frozen & (count > 1), hi, ns[:, 0])

    def branch_choice(self, x):
        """Per trace, whether each point sits on the largest root."""
        out = []
        for j in range(len(self.traces)):
            n = self.photon_numbers(x, j)
            hi = self.photon_numbers(x, j, frozen=np.ones(n.size, dtype=bool))
            out.append(np.isclose(n, hi, rtol=1e-9, atol=0.0))
        return out

    def model_trace(self, x, j, frozen=None):
        t = self.traces[j]
        a, al, tau, ql, qc, phi, dfc, khz = x
        f = t.freq_hz
        n = self.photon_numbers(x, j, frozen)
        env = a * np.exp(1j * (al - tau * TWO_PI * (f - self.f_ref)))
        den = 1.0 + 2j * ql * ((f - self.f_ref) - dfc + khz * n) / f
        return env * (1.0 - (ql / qc) * np.exp(1j * phi) / den)

    def residuals(self, x, frozen=None):
        parts = []
        for j, t in enumerate(self.traces):
            r = self.model_trace(x, j, None if frozen is None else frozen[j]) - t.s21
            parts.append(r.real)
            parts.append(r.imag)
        return np.concatenate(parts)

    def smooth_jacobian(self, x, scale):
        """Central differences with each point held on its root, so branch jumps do not leak in."""
        frozen = self.branch_choice(x)
        cols = []
        for k in range(x.size):
            h = 1e-6 * scale[k]
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            cols.append((self.residuals(xp, frozen) - self.residuals(xm, frozen)) / (2 * h))
        return np.column_stack(cols)


def _kerr_scan(prob: _KerrProblem, x_lin: np.ndarray, kappa: float, omega_c: float) -> float:
    """Coarse log scan of K/2π for the starting point."""
    qc = x_lin[4]
    fmax = max(float(np.max(kerr_drive_term(TWO_PI * t.freq_hz, P, qc, omega_c)))
               for t, P in zip(prob.traces, prob.powers))
    k_unit = kappa**3 / fmax / TWO_PI  # K/2π at which the strongest drive reaches c = 1
    best, best_cost = 0.0, float(np.sum(prob.residuals(np.append(x_lin, 0.0)) ** 2))
    for k in k_unit * np.logspace(-4, 1.5, 45):
        c = float(np.sum(prob.residuals(np.append(x_lin, k)) ** 2))
        if c < best_cost:
            best, best_cost = k, c
    return best


def _branch_jumps(prob: _KerrProblem, x) -> List[List[int]]:
    """Indices per trace where the followed branch leaves the bistable region by a jump."""
    out = []
    a, al, tau, ql, qc, phi, dfc, khz = x
    omega_c = TWO_PI * (prob.f_ref + dfc)
    for j, t in enumerate(prob.traces):
        f = t.freq_hz
        F = kerr_drive_term(TWO_PI * f, prob.powers[j], qc, omega_c)
        detuning = TWO_PI * ((f - prob.f_ref) - dfc)
        kappa = omega_c / ql
        kerr = TWO_PI * khz
        n = branch_photon_numbers(kappa, kerr, F, detuning, prob.dirs[j])
        if kerr == 0:
            out.append([])
            continue
        roots, mult = cubic_roots(detuning / kappa, kerr * F / kappa**3)
        count = (mult > 0).sum(axis=1)
        rel = np.abs(np.diff(n)) / np.maximum(n[1:], 1e-300)
        idx = [int(i + 1) for i in np.nonzero(rel > 0.2)[0] if count[i] > 1 or count[i + 1] > 1]
        out.append(idx)
    return out


def circle_fit_kerr(traces: Sequence[S21Trace], guess: Optional[CircleFitParams] = None,
                    attenuation_offset_db: float = 0.0, refit_extremes: bool = True,
                    max_nfev: int = 2000) -> CircleFitParams:
    """Joint Kerr-extended circle fit over traces at several powers.

    Environment, quality factors and ω_c are shared. The input attenuation
    uncertainty is propagated by refitting with the attenuation shifted by
    ± the traces' stated uncertainty (``kerr_range``).
    """
    traces = list(traces)
    if len(traces) < 3:
        raise ValidationError([("traces", len(traces), "Kerr circle fit needs at least 3 powers")])
    if len({t.power_dbm for t in traces}) < 2:
        raise ValidationError([("traces", None, "traces must span several powers")])
    if guess is None:
        low = min(traces, key=lambda t: t.power_at_cavity())
        guess = circle_fit_linear(low)
    p0 = {n: getattr(guess, n) for n in LINEAR_NAMES}
    f_ref = p0["omega_c"] / TWO_PI
    lin = _LinearProblem(np.array([f_ref]), np.zeros(1), f_ref)

    span = max(float(np.ptp(t.freq_hz)) for t in traces)
    linewidth_hz = p0["omega_c"] / TWO_PI / p0["Q_l"]

    def lsq(prob, x_start):
        # finite differences use steps relative to max(1, |x|); work in O(1) units
        scale = np.array([abs(p0["a"]), 1.0, 1.0 / (TWO_PI * span), p0["Q_l"], p0["Q_c_mag"], 1.0,
                          linewidth_hz, max(abs(x_start[7]), 1e-6 * linewidth_hz)])
        sol = least_squares(lambda y: prob.residuals(y * scale), np.asarray(x_start) / scale, method="trf",
                            x_scale="jac", jac="3-point", ftol=1e-14, xtol=1e-14, gtol=1e-14,
                            max_nfev=max_nfev)
        if sol.status <= 0:
            raise ConvergenceError(f"Kerr circle fit did not converge: {sol.message}")
        sol.x = sol.x * scale
        sol.jac = prob.smooth_jacobian(sol.x, scale)
        return sol

    def fit_at(offset_db, x_start=None):
        prob = _KerrProblem(traces, f_ref, offset_db)
        if x_start is None:
            x_lin = lin.to_internal(p0)
            k0 = guess.kerr / TWO_PI if guess.kerr is not None else _kerr_scan(prob, x_lin, p0["omega_c"] / p0["Q_l"],
                                                                               p0["omega_c"])
            x_start = np.append(x_lin, k0)
        # Branch jumps make the joint cost piecewise smooth, with narrow basins in K.
        # Traces well below the bifurcation give a smooth cost, so fit those first.
        x = np.asarray(x_start, dtype=float)
        mono_prev = None
        for _ in range(4):
            out = lin.to_output(x[:7])
            mono = [j for j, t in enumerate(traces)
                    if _drive_ratio(t, out, TWO_PI * x[7], offset_db) < SMOOTH_STAGE_MAX_RATIO]
            if len(mono) in (0, len(traces)) or mono == mono_prev:
                break
            sub = _KerrProblem([traces[j] for j in mono], f_ref, offset_db)
            x = lsq(sub, x).x
            mono_prev = mono
        return prob, lsq(prob, x)

    prob, sol = fit_at(attenuation_offset_db)
    x = sol.x
    out = lin.to_output(x[:7])
    kerr = float(TWO_PI * x[7])
    p_out = dict(out)
    for t in traces:
        if t.direction == "none" and np.any(_bistable_points(t, p_out, kerr, attenuation_offset_db)):
            raise ValidationError([("direction", None, "bistable trace without a sweep direction tag")])
    T = np.eye(8)
    T[:7, :7] = lin.output_jacobian(x[:7])
    T[7, 7] = TWO_PI
    cov = check_covariance(T @ covariance_from_jacobian(sol.jac, sol.fun) @ T.T)
    kerr_range = None
    offsets = None
    if refit_extremes:
        u = max(t.attenuation_uncertainty_db for t in traces)
        ks = []
        for off in (-u, +u):
            x_off = x.copy()
            x_off[7] *= 10.0 ** (off / 10.0)  # K·P is what the data constrain
            _, s2 = fit_at(attenuation_offset_db + off, x_start=x_off)
            ks.append(float(TWO_PI * s2.x[7]))
        kerr_range = tuple(ks)
        offsets = (-u, u)
    rms = float(np.sqrt(np.mean(sol.fun**2) * 2.0))
    return CircleFitParams(**out, kerr=kerr, covariance=cov, names=LINEAR_NAMES + ("kerr",), residual_rms=rms,
                           kerr_range=kerr_range, attenuation_offsets_db=offsets,
                           branch_jumps=_branch_jumps(prob, x))


def synthetic_s21(freq_hz, params: dict, power_w: Optional[float] = None, kerr: float = 0.0,
                  direction: str = "none", noise: float = 0.0, rng=None) -> np.ndarray:
    """Forward-model transmission, optionally with additive complex Gaussian noise of std ``noise``."""
    vals = {n: params[n] for n in LINEAR_NAMES}
    if kerr and power_w:
        z = s21_kerr(freq_hz, power_w, kerr=kerr, direction=direction, **vals)
    else:
        z = s21_notch(freq_hz, **vals)
    if noise:
        rng = np.random.default_rng(rng)
        z = z + noise * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape)) / math.sqrt(2.0)
    return z


def power_for_ratio(r: float, params: dict, kerr: float) -> float:
    """Power at the cavity (W) that puts a trace at drive ratio ``r`` (resonant photon flux)."""
    kappa = params["omega_c"] / params["Q_l"]
    F = r * C_CRIT * kappa**3 / kerr
    return F / kerr_drive_term(params["omega_c"], 1.0, params["Q_c_mag"], params["omega_c"])


DEFAULT_KERR_SET = ((0.05, "up"), (0.5, "up"), (1.0, "up"), (1.5, "up"), (1.5, "down"))


def synthetic_kerr_set(params: dict, kerr: float, freq_hz, ratios=DEFAULT_KERR_SET, attenuation_db: float = 60.0,
                       attenuation_error_db: float = 0.0, noise: float = 1e-3, rng=None) -> List[S21Trace]:
    """Seeded multi-power S21 traces from the Kerr forward model.

    ``ratios`` lists ``(r, direction)`` pairs. The traces record
    ``attenuation_db``, while the power reaching the cavity was in fact
    ``attenuation_error_db`` lower, mimicking a miscalibrated input line.
    """
    rng = np.random.default_rng(rng)
    f = np.asarray(freq_hz, dtype=float)
    out = []
    for r, direction in ratios:
        p_true = power_for_ratio(r, params, kerr)
        dbm = 10.0 * math.log10(p_true / 1e-3) + attenuation_db + attenuation_error_db
        ff = f if direction != "down" else f[::-1]
        z = synthetic_s21(ff, params, power_w=p_true, kerr=kerr, direction=direction, noise=noise, rng=rng)
        out.append(S21Trace(ff, z, power_dbm=dbm, attenuation_db=attenuation_db, direction=direction))
    return out
