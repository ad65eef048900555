r"""
Photon-number fluctuation spectrum of the driven Kerr cavity.

Around a steady state :math:`a = \alpha + d` the fluctuations obey
:math:`\dot v = M v + \text{noise}` with :math:`v = (d, d^\dagger)` and

.. math::

    M = \begin{pmatrix} i\tilde\Delta - \kappa/2 & i\lambda \\
                        -i\lambda^* & -i\tilde\Delta - \kappa/2 \end{pmatrix},
    \qquad \tilde\Delta = \Delta + 2Kn_c,\ \lambda = K\alpha^2 .

With vacuum noise entering through all ports the two-sided spectrum of
:math:`\delta n = \alpha^* d + \alpha d^\dagger` (transform :math:`e^{+i\omega t}`) is

.. math::

    S_{nn}[\omega] = \frac{\kappa n_c\,[\kappa^2/4 + (\omega - \bar\Delta)^2]}{|D(\omega)|^2},
    \quad D(\omega) = (\kappa/2 - i\omega)^2 + \tilde\Delta^2 - K^2 n_c^2,

with :math:`\bar\Delta = \Delta + K n_c`. :func:`s_nn_matrix` evaluates the
same quantity by inverting the 2x2 susceptibility directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import DriveParams, InstabilityError, MechParams, SystemParams, angular_to_hz, validate
from .steadystate import SteadyStateBranch, bistable_window, hysteresis_sweep, solve_steady_states

CROSS_CHECK_RTOL = 1e-10


@dataclass(frozen=True)
class LinearizedCavity:
    delta_tilde: float
    lam: complex
    kappa: float
    n_c: float
    branch: SteadyStateBranch
    params: Optional[SystemParams] = None

    @property
    def kerr(self) -> float:
        return self.params.cavity.kerr

    @property
    def delta_bar(self) -> float:
        return self.branch.delta_bar

    @property
    def alpha(self) -> complex:
        return self.branch.alpha

    def drift_matrix(self) -> np.ndarray:
        dt, lam, k = self.delta_tilde, self.lam, self.kappa
        return np.array([[1j * dt - k / 2, 1j * lam],
                         [-1j * np.conj(lam), -1j * dt - k / 2]])

    @property
    def stable(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.drift_matrix()).real < 0))


@dataclass
class SpectrumResult:
    omega: np.ndarray
    s_nn: np.ndarray
    gamma_s: Optional[float] = None
    gamma_as: Optional[float] = None
    omega_lab: Optional[np.ndarray] = None
    label: str = ""

    def to_csv(self, path=None, header: Optional[dict] = None) -> str:
        from .io import write_csv
        cols = ["omega_hz"]
        data = [angular_to_hz(self.omega)]
        if self.omega_lab is not None:
            cols.append("omega_lab_hz")
            data.append(angular_to_hz(self.omega_lab))
        cols.append("s_nn")
        data.append(self.s_nn)
        hdr = {"branch": self.label}
        if self.gamma_s is not None:
            hdr.update(gamma_s=self.gamma_s, gamma_as=self.gamma_as)
        hdr.update(header or {})
        return write_csv(path, cols, list(zip(*data)), header=hdr)


def linearize(branch: SteadyStateBranch, params: SystemParams) -> LinearizedCavity:
    """Fluctuation parameters ``Δ̃ = Δ + 2K·n_c`` and ``λ = K·α²`` around ``branch``."""
    params = validate(params)
    K = params.cavity.kerr
    lam = K * branch.alpha**2
    return LinearizedCavity(delta_tilde=branch.detuning + 2.0 * K * branch.n_c, lam=complex(lam),
                            kappa=params.cavity.kappa, n_c=branch.n_c, branch=branch, params=params)


def _require_stable(lin: LinearizedCavity):
    if not lin.branch.stable:
        raise InstabilityError(f"spectrum undefined on unstable {lin.branch.label} branch "
                               f"(n_c={lin.n_c:.6g}, detuning={lin.branch.detuning:.6g} rad/s)")


def _check_omega(omega):
    w = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("omega must be finite")
    return w


def _closed_form(lin: LinearizedCavity, w: np.ndarray) -> np.ndarray:
    k, n = lin.kappa, lin.n_c
    lam_abs2 = abs(lin.lam) ** 2
    D = (k / 2 - 1j * w) ** 2 + lin.delta_tilde**2 - lam_abs2
    return k * n * (k * k / 4 + (w - lin.delta_bar) ** 2) / np.abs(D) ** 2


def s_nn_matrix(lin: LinearizedCavity, omega, n_bath: float = 0.0) -> np.ndarray:
    """S_nn by explicit inversion of ``χ(ω) = (−iω − M)⁻¹``.

    ``S = u·χ(ω)·N·χ(−ω)ᵀ·u`` with ``u = (α*, α)`` and input-noise matrix
    ``N = κ[[0, n̄+1], [n̄, 0]]`` for a bath of ``n_bath`` thermal photons.
    """
    _require_stable(lin)
    w = np.atleast_1d(_check_omega(omega))
    M = lin.drift_matrix()
    alpha = lin.alpha
    u = np.array([np.conj(alpha), alpha])
    N = lin.kappa * np.array([[0.0, n_bath + 1.0], [n_bath, 0.0]])
    eye = np.eye(2)
    chi_p = np.linalg.inv(-1j * w[:, None, None] * eye - M)
    chi_m = np.linalg.inv(1j * w[:, None, None] * eye - M)
    left = np.einsum("i,wij->wj", u, chi_p)
    right = np.einsum("wji,j->wi", chi_m, u)
    s = np.einsum("wi,ij,wj->w", left, N, right)
    out = s.real
    return out if np.ndim(omega) else out[0]


def s_nn(lin: LinearizedCavity, omega, n_bath: float = 0.0, cross_check: bool = False):
    """Two-sided photon-number spectrum S_nn[ω] (s), ω in the drive frame (rad/s).

    Unstable branches raise :class:`InstabilityError`. ``n_bath > 0`` (thermal
    photons at the cavity input) is evaluated through :func:`s_nn_matrix`.
    With ``cross_check=True`` the closed form is compared point by point
    with the matrix route and a ``ConvergenceError`` is raised on
    disagreement beyond 1e-10 relative.
    """
    _require_stable(lin)
    w = _check_omega(omega)
    if n_bath:
        return s_nn_matrix(lin, w, n_bath=n_bath)
    out = _closed_form(lin, w)
    if cross_check:
        ref = s_nn_matrix(lin, np.atleast_1d(w)).reshape(np.shape(out))
        rel = np.max(np.abs(out - ref) / np.maximum(np.abs(ref), np.finfo(float).tiny))
        if rel > CROSS_CHECK_RTOL:
            from .core import ConvergenceError
            raise ConvergenceError(f"closed-form and matrix S_nn disagree: max rel. error {rel:.3e}")
    return float(out) if out.ndim == 0 else out


def scattering_rates(lin: LinearizedCavity, mech: Optional[MechParams] = None) -> Tuple[float, float]:
    """Stokes and anti-Stokes rates ``(Γ_S, Γ_AS) = g0²·(S_nn[−ω_m], S_nn[+ω_m])``."""
    mech = mech if mech is not None else lin.params.mech
    s = s_nn(lin, np.array([-mech.omega_m, mech.omega_m]))
    g2 = mech.g0**2
    return float(g2 * s[0]), float(g2 * s[1])


def spectrum_trace(lin: LinearizedCavity, grid, mech: Optional[MechParams] = None,
                   lab_frame: bool = False, n_bath: float = 0.0) -> SpectrumResult:
    """Vectorized S_nn over ``grid`` plus the scattering rates.

    With ``lab_frame=True`` the lab-frame axis ``ω_d + ω`` is attached,
    where ``ω_d = ω_c + Δ``.
    """
    grid = _check_omega(grid)
    vals = s_nn(lin, grid, n_bath=n_bath)
    mech = mech if mech is not None else (lin.params.mech if lin.params is not None else None)
    gs = gas = None
    if mech is not None:
        gs, gas = scattering_rates(lin, mech)
    lab = None
    if lab_frame:
        omega_d = lin.params.cavity.omega_c + lin.branch.detuning
        lab = omega_d + grid
    return SpectrumResult(omega=grid, s_nn=np.atleast_1d(vals), gamma_s=gs, gamma_as=gas,
                          omega_lab=lab, label=lin.branch.label)


def asymmetry_about_peak(omega: np.ndarray, s: np.ndarray, span: float) -> float:
    """Max |S(ω_pk + x) − S(ω_pk − x)| / S(ω_pk) for 0 < x ≤ span, on a uniform grid."""
    i = int(np.argmax(s))
    dw = omega[1] - omega[0]
    m = int(round(span / dw))
    m = min(m, i, len(s) - 1 - i)
    if m < 1:
        return 0.0
    right = s[i + 1:i + 1 + m]
    left = s[i - 1::-1][:m]
    return float(np.max(np.abs(right - left)) / s[i])


@dataclass
class RatesTrace:
    """Stokes and anti-Stokes rates (rad/s) along a detuning sweep; NaN where no stable branch."""
    detunings: np.ndarray
    labels: List[Optional[str]]
    n_c: np.ndarray
    gamma_s: np.ndarray
    gamma_as: np.ndarray
    direction: str
    jumps: List[int] = field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.gamma_s)

    @property
    def net(self) -> np.ndarray:
        """``Γ_S − Γ_AS``: positive means net heating."""
        return self.gamma_s - self.gamma_as

    def to_csv(self, path=None, header: Optional[dict] = None) -> str:
        from .io import write_csv
        rows = []
        for d, lab, n, gs, gas in zip(self.detunings, self.labels, self.n_c, self.gamma_s, self.gamma_as):
            ok = bool(np.isfinite(gs))
            rows.append((angular_to_hz(d), lab or "", n if np.isfinite(n) else None,
                         angular_to_hz(gs) if ok else None, angular_to_hz(gas) if ok else None,
                         angular_to_hz(gs - gas) if ok else None, int(ok)))
        hdr = {"direction": self.direction}
        hdr.update(header or {})
        return write_csv(path, ["detuning_hz", "branch", "n_c", "gamma_s_hz", "gamma_as_hz",
                                "net_heating_hz", "valid"], rows, header=hdr)


def rates_sweep(params: SystemParams, drive: DriveParams, grid: Sequence[float], direction: Optional[str] = None,
                branch_policy: str = "sweep") -> RatesTrace:
    """Scattering rates along a detuning grid.

    ``branch_policy="sweep"`` follows the hysteresis branch for the sweep
    direction; ``"low"``/``"high"`` pin one branch and leave NaN where it
    does not exist. Unstable branches give NaN rather than an error.
    """
    params = validate(params)
    grid = np.asarray(grid, dtype=float)
    jumps: List[int] = []
    if branch_policy == "sweep":
        sweep = hysteresis_sweep(params, drive, grid, direction)
        branches = list(sweep.branches)
        jumps, direction = sweep.jumps, sweep.direction
    elif branch_policy in ("low", "high"):
        window = bistable_window(params, drive) if params.cavity.kerr != 0 else None
        branches = []
        for d in grid:
            match = [b for b in solve_steady_states(params, drive.at(d), window=window) if b.label == branch_policy]
            branches.append(match[0] if match else None)
        direction = direction or "none"
    else:
        raise ValueError(f"unknown branch_policy {branch_policy!r}")
    n = np.full(grid.size, np.nan)
    gs = np.full(grid.size, np.nan)
    gas = np.full(grid.size, np.nan)
    for i, b in enumerate(branches):
        if b is None:
            continue
        n[i] = b.n_c
        if b.stable:
            gs[i], gas[i] = scattering_rates(linearize(b, params))
    return RatesTrace(detunings=grid, labels=[b.label if b is not None else None for b in branches], n_c=n,
                      gamma_s=gs, gamma_as=gas, direction=direction, jumps=jumps)
