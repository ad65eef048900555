r"""
Classical steady states of the driven Kerr cavity.

The intracavity photon number solves the cubic

.. math::

    n_c\,[(\Delta + K n_c)^2 + \kappa^2/4] = \kappa_c n_{in},

which is handled in the dimensionless variable :math:`u = K n_c/\kappa`
(detuning :math:`\delta = \Delta/\kappa`, drive :math:`c = K\kappa_c n_{in}/\kappa^3`):

.. math::

    u^3 + 2\delta u^2 + (\delta^2 + 1/4)\,u - c = 0 .

Every real root of this polynomial has the sign of ``K`` and is therefore a
physical (non-negative) photon number.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .core import (ConvergenceError, DriveParams, SystemParams, ValidationError,
                   angular_to_hz, validate)

SQRT3 = math.sqrt(3.0)
C_CRIT = 1.0 / (3.0 * SQRT3)  # dimensionless drive at the bifurcation point

# relative width of the "exactly at threshold" band and of the multiple-root band
_THRESHOLD_RTOL = 1e-12
_DISC_RTOL = 1e-12
_RESIDUAL_RTOL = 1e-10


@dataclass(frozen=True)
class SteadyStateBranch:
    """One classical solution of the steady-state cubic.

    ``beta`` is the static mechanical displacement ``-g0·n_c/ω_m`` (in units
    of the zero-point amplitude); its feedback on the detuning is neglected.
    """
    n_c: float
    alpha: complex
    label: str
    stable: bool
    delta_tilde: float
    delta_bar: float
    lambda_sq: float
    detuning: float
    multiplicity: int = 1
    beta: float = 0.0


@dataclass(frozen=True)
class BistableWindow:
    """Spinodal detunings (rad/s) bounding the region with two stable states."""
    delta_lo: Optional[float]
    delta_hi: Optional[float]
    exists: bool
    n_lo: Optional[float] = None
    n_hi: Optional[float] = None
    degenerate_point: Optional[tuple] = None

    def contains(self, detuning) -> np.ndarray:
        d = np.asarray(detuning, dtype=float)
        if not self.exists:
            return np.zeros(d.shape, dtype=bool)
        return (d > self.delta_lo) & (d < self.delta_hi)

    @property
    def width(self) -> float:
        return self.delta_hi - self.delta_lo if self.exists else 0.0


@dataclass
class SweepResult:
    """Adiabatic branch following over a detuning grid."""
    detunings: np.ndarray
    labels: List[str]
    n_c: np.ndarray
    jumps: List[int]
    direction: str
    branches: List[SteadyStateBranch] = field(repr=False, default_factory=list)

    def to_csv(self, path=None, header: Optional[dict] = None) -> str:
        from .io import write_csv
        rows = [(angular_to_hz(d), n, lab, int(i in self.jumps))
                for i, (d, n, lab) in enumerate(zip(self.detunings, self.n_c, self.labels))]
        return write_csv(path, ["detuning_hz", "n_c", "branch", "jumped"], rows, header=header)


# ---------------------------------------------------------------------------
# dimensionless cubic
# ---------------------------------------------------------------------------

def _poly(u, delta, c):
    return u * ((delta + u) ** 2 + 0.25) - c


def _dpoly(u, delta):
    return 3 * u * u + 4 * delta * u + delta * delta + 0.25


def cubic_roots(delta, c):
    """Real roots of ``u³ + 2δu² + (δ²+¼)u − c`` for arrays ``delta``, ``c``.

    Returns ``(roots, mult)``, both of shape ``(..., 3)``: roots sorted
    ascending and padded with NaN, ``mult`` the multiplicity of each entry
    (0 for padding). Depressed-cubic closed forms are followed by Newton
    polishing of simple roots in extended precision.
    """
    delta, c = np.broadcast_arrays(np.asarray(delta, dtype=float), np.asarray(c, dtype=float))
    shape = delta.shape
    d = delta.ravel()
    cc = c.ravel()
    m = d.size
    roots = np.full((m, 3), np.nan)
    mult = np.zeros((m, 3), dtype=int)

    p = 0.25 - d * d / 3.0
    q = -2.0 * d**3 / 27.0 - d / 6.0 - cc
    shift = -2.0 * d / 3.0
    disc = -(4.0 * p**3 + 27.0 * q * q)
    scale = 4.0 * np.abs(p) ** 3 + 27.0 * q * q
    # near the cusp p and q are both at rounding level
    tiny_p = np.abs(p) <= 1e-11 * (1.0 + d * d)
    tiny_q = np.abs(q) <= 1e-15 * (1.0 + np.abs(d) ** 3 + np.abs(cc))
    triple = tiny_p & tiny_q
    three = (disc > _DISC_RTOL * scale) & ~triple
    one = (disc < -_DISC_RTOL * scale) & ~triple
    double = ~(three | one | triple)

    if np.any(three):
        pp, qq = p[three], q[three]
        amp = 2.0 * np.sqrt(-pp / 3.0)
        arg = np.clip(3.0 * qq / (pp * amp), -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
        k = np.arange(3)
        t = amp[:, None] * np.cos(theta[:, None] - 2.0 * np.pi * k[None, :] / 3.0)
        roots[three] = np.sort(t + shift[three, None], axis=1)
        mult[three] = 1
    if np.any(one):
        pp, qq = p[one], q[one]
        sq = np.sqrt(qq * qq / 4.0 + pp**3 / 27.0)
        a = -np.sign(qq) * np.cbrt(np.abs(qq) / 2.0 + sq)
        a = np.where(a == 0.0, np.cbrt(-qq), a)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(a != 0.0, a - pp / (3.0 * a), 0.0)
        roots[one, 0] = t + shift[one]
        mult[one, 0] = 1
    if np.any(triple):
        roots[triple, 0] = shift[triple]
        mult[triple, 0] = 3
    if np.any(double):
        pp, qq = p[double], q[double]
        t_double = -1.5 * qq / pp
        t_simple = 3.0 * qq / pp
        u_d = t_double + shift[double]
        u_s = t_simple + shift[double]
        lo = np.minimum(u_d, u_s)
        hi = np.maximum(u_d, u_s)
        roots[double, 0] = lo
        roots[double, 1] = hi
        mult[double, 0] = np.where(u_d <= u_s, 2, 1)
        mult[double, 1] = np.where(u_d <= u_s, 1, 2)

    # Newton polish of simple roots in extended precision
    simple = mult == 1
    if np.any(simple):
        rows, cols = np.nonzero(simple)
        u = roots[rows, cols].astype(np.longdouble)
        dl = d[rows].astype(np.longdouble)
        cl = cc[rows].astype(np.longdouble)
        for _ in range(3):
            f = u * ((dl + u) ** 2 + np.longdouble(0.25)) - cl
            fp = 3 * u * u + 4 * dl * u + dl * dl + np.longdouble(0.25)
            ok = fp != 0
            step = np.where(ok, f / np.where(ok, fp, 1), 0)
            u = u - step
        roots[rows, cols] = u.astype(float)
    return roots.reshape(shape + (3,)), mult.reshape(shape + (3,))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def critical_input(params: SystemParams) -> float:
    """Input photon flux at the onset of bistability, ``n_bi = (κ/κ_c)·κ²/(3√3·K)`` (1/s)."""
    cav = params.cavity
    if not cav.kerr > 0:
        raise ValidationError([("kerr", cav.kerr, "no bifurcation for non-positive Kerr")])
    kappa = cav.kappa
    return (kappa / cav.kappa_c) * kappa**2 / (3.0 * SQRT3 * cav.kerr)


def _drive_term(params, drive) -> float:
    if isinstance(drive, DriveParams):
        return drive.drive_term(params.cavity)
    n_in = float(drive)
    if not n_in >= 0:
        raise ValidationError([("n_in", n_in, "n_in must be >= 0")])
    return params.cavity.kappa_c * n_in


def _window_dimensionless(c: float):
    """Spinodal points ``(δ, u)`` for dimensionless drive ``c > C_CRIT`` (K > 0)."""

    def s(x):
        return math.sqrt(max(x * x - 0.25, 0.0))

    def r_plus(x):
        return x * ((s(x) - x) ** 2 + 0.25) - c

    def r_minus(x):
        return x * ((s(x) + x) ** 2 + 0.25) - c

    xc = 1.0 / SQRT3
    pts = []
    hi = max(4.0 * c + 1.0, 2.0)
    x_b = brentq(r_plus, xc, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    pts.append((-2.0 * x_b + s(x_b), x_b))
    if c < 0.25:
        x_a = brentq(r_plus, 0.5, xc, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        pts.append((-2.0 * x_a + s(x_a), x_a))
    else:
        hi = max(1.0, 2.0 * c ** (1.0 / 3.0))
        x_c = brentq(r_minus, 0.5, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        pts.append((-2.0 * x_c - s(x_c), x_c))
    pts.sort()
    for dlt, x in pts:
        val = x * ((dlt + x) ** 2 + 0.25)
        slope = _dpoly(x, dlt)
        if abs(val - c) > 1e-9 * c or abs(slope) > 1e-9 * (x * x + dlt * dlt + 0.25):
            raise ConvergenceError(f"spinodal polish failed at delta={dlt}: residual {val - c}, slope {slope}")
    return pts


def bistable_window(params: SystemParams, drive) -> BistableWindow:
    """Detuning range with two stable steady states for the given drive.

    ``drive`` is a :class:`DriveParams` or an input flux ``n_in`` (1/s).
    At exactly the critical drive the window collapses to a point, reported
    through ``degenerate_point = (Δ_c, n_c)`` with ``exists = False``.
    """
    cav = params.cavity
    K = cav.kerr
    if K == 0:
        return BistableWindow(None, None, False)
    kappa = cav.kappa
    F = _drive_term(params, drive)
    c = abs(K) * F / kappa**3
    sgn = 1.0 if K > 0 else -1.0
    if abs(c - C_CRIT) <= _THRESHOLD_RTOL * C_CRIT:
        d_c = -sgn * SQRT3 / 2.0 * kappa
        return BistableWindow(None, None, False, degenerate_point=(d_c, kappa / (SQRT3 * abs(K))))
    if c < C_CRIT:
        return BistableWindow(None, None, False)
    (d1, x1), (d2, x2) = _window_dimensionless(c)
    if K > 0:
        return BistableWindow(d1 * kappa, d2 * kappa, True, n_lo=x1 * kappa / K, n_hi=x2 * kappa / K)
    return BistableWindow(-d2 * kappa, -d1 * kappa, True, n_lo=x2 * kappa / -K, n_hi=x1 * kappa / -K)


def _single_label(K, detuning, window: Optional[BistableWindow]) -> str:
    if window is None or not window.exists:
        return "low"
    mid = 0.5 * (window.delta_lo + window.delta_hi)
    if K > 0:
        return "high" if detuning > mid else "low"
    return "high" if detuning < mid else "low"


def _make_branch(params, n, label, detuning, F, mult=1) -> SteadyStateBranch:
    cav, mech = params.cavity, params.mech
    kappa, K = cav.kappa, cav.kerr
    alpha_d = math.sqrt(F)
    dbar = detuning + K * n
    # α[i(Δ + K n) − κ/2] = −i·α_d, input amplitude real positive
    alpha = -1j * alpha_d / (1j * dbar - kappa / 2.0) if alpha_d > 0 else 0j
    dtilde = detuning + 2.0 * K * n
    lam_sq = (K * n) ** 2
    d0 = kappa**2 / 4.0 + dtilde**2 - lam_sq
    stable = bool(d0 > 0) and mult == 1
    beta = -mech.g0 * n / mech.omega_m
    return SteadyStateBranch(n_c=float(n), alpha=complex(alpha), label=label, stable=stable,
                             delta_tilde=float(dtilde), delta_bar=float(dbar), lambda_sq=float(lam_sq),
                             detuning=float(detuning), multiplicity=int(mult), beta=float(beta))


def _check_residual(params, n, detuning, F):
    cav = params.cavity
    kappa, K = cav.kappa, cav.kerr
    nl = np.longdouble(n)
    res = nl * ((np.longdouble(detuning) + np.longdouble(K) * nl) ** 2 + np.longdouble(kappa) ** 2 / 4) \
        - np.longdouble(F)
    tol = _RESIDUAL_RTOL * max(1.0, n * kappa**2, F)
    if not abs(float(res)) <= tol:
        raise ConvergenceError(f"steady-state root n_c={n!r} at detuning {detuning!r} has residual "
                               f"{float(res):.3e} > {tol:.3e}")


def _warn_static_shift(params, n):
    mech, kappa = params.mech, params.cavity.kappa
    shift = 2.0 * mech.g0**2 * n / mech.omega_m
    if shift > kappa / 1000.0:
        # constant text so the default filter reports it once per call site
        warnings.warn("static optomechanical detuning shift 2·g0²·n_c/ω_m exceeds kappa/1000 "
                      "and is neglected", stacklevel=3)


def solve_steady_states(params: SystemParams, drive: DriveParams,
                        window: Optional[BistableWindow] = None) -> List[SteadyStateBranch]:
    """All steady states at ``drive.detuning``, sorted by ascending photon number.

    Three distinct roots are labelled low/middle/high. A single root is
    labelled by the branch it continues (``high`` beyond the window edge on
    the high-branch side, ``low`` otherwise). At a spinodal the merged root
    is returned once with ``multiplicity=2`` and ``stable=False``.
    """
    params = validate(params)
    cav = params.cavity
    kappa, K = cav.kappa, cav.kerr
    F = _drive_term(params, drive)
    detuning = float(drive.detuning) if isinstance(drive, DriveParams) else 0.0
    if not math.isfinite(detuning):
        raise ValidationError([("detuning", detuning, "detuning must be finite")])

    if K == 0:
        n = F / (detuning**2 + kappa**2 / 4.0)
        br = [_make_branch(params, n, "low", detuning, F)]
        _warn_static_shift(params, n)
        return br

    roots, mult = cubic_roots(detuning / kappa, K * F / kappa**3)
    sel = mult > 0
    us, ms = roots[sel], mult[sel]
    ns = us * kappa / K
    order = np.argsort(ns)
    ns, ms = ns[order], ms[order]
    ns = np.maximum(ns, 0.0)
    for n in ns:
        _check_residual(params, float(n), detuning, F)

    if len(ns) == 3:
        labels = ["low", "middle", "high"]
    elif len(ns) == 2:
        labels = ["low", "high"]
    else:
        if window is None:
            window = bistable_window(params, drive)
        labels = [_single_label(K, detuning, window)]
        if ms[0] == 3:
            labels = ["middle"]
    out = [_make_branch(params, float(n), lab, detuning, F, int(m)) for n, lab, m in zip(ns, labels, ms)]
    _warn_static_shift(params, float(ns[-1]))
    return out


def _sweep_direction(grid: np.ndarray, direction: Optional[str]) -> str:
    if grid.size == 0:
        raise ValidationError([("grid", None, "empty detuning grid")])
    diffs = np.diff(grid)
    if direction in (None, "none"):
        if np.all(diffs > 0) or grid.size == 1:
            return "up"
        if np.all(diffs < 0):
            return "down"
        raise ValidationError([("grid", None, "detuning grid must be strictly monotone")])
    if direction == "up" and not np.all(diffs > 0):
        raise ValidationError([("grid", None, "up-sweep requires a strictly increasing grid")])
    if direction == "down" and not np.all(diffs < 0):
        raise ValidationError([("grid", None, "down-sweep requires a strictly decreasing grid")])
    if direction not in ("up", "down"):
        raise ValidationError([("direction", direction, "direction must be up, down or none")])
    return direction


def hysteresis_sweep(params: SystemParams, drive: Union[DriveParams, float],
                     grid: Sequence[float], direction: Optional[str] = None) -> SweepResult:
    """Adiabatically follow the occupied branch along a monotone detuning grid.

    The occupied branch is kept while it exists and is stable; otherwise the
    state jumps to the stable root nearest the previous photon number and
    the grid index is recorded in ``jumps``. For ``K > 0`` an up-sweep
    (increasing Δ) rides the low branch through the bistable window and a
    down-sweep rides the high branch.
    """
    params = validate(params)
    grid = np.asarray(grid, dtype=float)
    if isinstance(drive, DriveParams) and direction is None and drive.sweep_direction != "none":
        direction = drive.sweep_direction
    direction = _sweep_direction(grid, direction)
    if not isinstance(drive, DriveParams):
        drive = DriveParams(n_in=float(drive))
    K = params.cavity.kerr
    window = bistable_window(params, drive) if K != 0 else None

    if K > 0:
        start_label = "low" if direction == "up" else "high"
    elif K < 0:
        start_label = "high" if direction == "up" else "low"
    else:
        start_label = "low"

    labels, ns, branches, jumps = [], [], [], []
    prev = None
    for i, d in enumerate(grid):
        roots = solve_steady_states(params, drive.at(d), window=window)
        stable = [b for b in roots if b.stable]
        if not stable:
            # exactly on a spinodal; keep the merged root and move on
            stable = roots
        if prev is None:
            same = [b for b in stable if b.label == start_label]
            choice = same[0] if same else stable[0]
        else:
            same = [b for b in stable if b.label == prev.label]
            if same:
                choice = min(same, key=lambda b: abs(b.n_c - prev.n_c))
            else:
                choice = min(stable, key=lambda b: abs(b.n_c - prev.n_c))
                jumps.append(i)
        labels.append(choice.label)
        ns.append(choice.n_c)
        branches.append(choice)
        prev = choice
    return SweepResult(detunings=grid, labels=labels, n_c=np.array(ns), jumps=jumps,
                       direction=direction, branches=branches)


def branch_photon_numbers(kappa: float, kerr: float, F: float, detunings, direction: str) -> np.ndarray:
    """Photon number along a sweep, as raw arrays (used inside fit loops).

    Same branch rule as :func:`hysteresis_sweep` without validation or
    branch objects. ``detunings`` must already be in sweep order; ``F``
    may be a scalar or one drive term per detuning.
    """
    d = np.asarray(detunings, dtype=float)
    F = np.asarray(F, dtype=float)
    if kerr == 0:
        return np.broadcast_to(F / (d**2 + kappa**2 / 4.0), d.shape).astype(float)
    roots, mult = cubic_roots(d / kappa, kerr * F / kappa**3)
    ns = np.sort(roots * kappa / kerr, axis=1)  # ascending photon number, NaN last
    count = (mult > 0).sum(axis=1)
    out = ns[:, 0].copy()
    start_high = (direction == "down") == (kerr > 0)
    high = None
    prev = -2
    for i in np.nonzero(count > 1)[0]:
        if i != prev + 1:
            high = None  # the previous point had a single root
        lo, hi = ns[i, 0], ns[i, count[i] - 1]
        if high is None:
            high = start_high if i == 0 else abs(hi - out[i - 1]) < abs(lo - out[i - 1])
        out[i] = hi if high else lo
        prev = i
    return out
