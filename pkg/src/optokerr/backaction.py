r"""
Optomechanical backaction on the mechanical mode, per detuning and branch.

Two routes are provided:

* quantum-noise (default): rates from the photon-number spectrum,
  :math:`\Gamma_{opt} = g_0^2(S_{nn}[\omega_m] - S_{nn}[-\omega_m])` and
  :math:`\langle n_m\rangle = (\Gamma_m n_{th} + g_0^2 S_{nn}[-\omega_m])/\Gamma_{eff}`.
  The optical spring is the imaginary part of the cavity self-energy at
  :math:`\omega_m`.
* eigenvalue: the 4x4 drift matrix of :math:`(d, d^\dagger, c, c^\dagger)`
  with coupling :math:`G = g_0\alpha`; the mechanical-like eigenvalue gives the
  effective frequency and damping without perturbation theory.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import DriveParams, InstabilityError, SystemParams, angular_to_hz, validate
from .spectrum import linearize, s_nn
from .steadystate import SteadyStateBranch, bistable_window, hysteresis_sweep, solve_steady_states

QUANTUM_NOISE = "quantum-noise"
EIGENVALUE = "eigenvalue"
WEAK_COUPLING_FRACTION = 0.01


@dataclass(frozen=True)
class BackactionPoint:
    """Mechanical observables at one detuning. Numeric fields are None when ``valid`` is False."""
    detuning: float
    branch: Optional[str]
    n_c: Optional[float] = None
    n_m: Optional[float] = None
    gamma_eff: Optional[float] = None
    delta_omega_m: Optional[float] = None
    gamma_opt: Optional[float] = None
    valid: bool = True
    method: str = QUANTUM_NOISE
    reason: str = ""


@dataclass
class CoolingTrace:
    points: List[BackactionPoint]
    direction: str
    r: float
    method: str
    jumps: List[int] = field(default_factory=list)

    def array(self, name: str) -> np.ndarray:
        """Field ``name`` as a float array, NaN where the point is invalid."""
        return np.array([getattr(p, name) if p.valid and getattr(p, name) is not None else np.nan
                         for p in self.points], dtype=float)

    @property
    def detunings(self) -> np.ndarray:
        return np.array([p.detuning for p in self.points])

    @property
    def valid(self) -> np.ndarray:
        return np.array([p.valid for p in self.points])

    @property
    def labels(self) -> List[Optional[str]]:
        return [p.branch for p in self.points]

    def to_csv(self, path=None, header: Optional[dict] = None) -> str:
        from .io import write_csv
        rows = []
        for p in self.points:
            if p.valid:
                rows.append((angular_to_hz(p.detuning), p.branch, p.n_c, p.n_m,
                             angular_to_hz(p.gamma_eff), angular_to_hz(p.delta_omega_m), 1))
            else:
                rows.append((angular_to_hz(p.detuning), p.branch or "", p.n_c, None, None, None, 0))
        hdr = {"r": self.r, "direction": self.direction, "method": self.method}
        hdr.update(header or {})
        return write_csv(path, ["detuning_hz", "branch", "n_c", "n_m", "gamma_eff_hz",
                                "delta_omega_m_hz", "valid"], rows, header=hdr)


def weak_coupling(branch: SteadyStateBranch, params: SystemParams) -> bool:
    """True when ``g0·sqrt(n_c) ≤ κ/100``."""
    return params.mech.g0 * math.sqrt(branch.n_c) <= WEAK_COUPLING_FRACTION * params.cavity.kappa


def cavity_self_energy(branch: SteadyStateBranch, params: SystemParams, omega) -> np.ndarray:
    """Self-energy Π(ω) the driven cavity adds to the mechanical amplitude equation.

    The mechanical pole moves to ``ω_m − iΓ_m/2 − iΠ(ω_m)``, so
    ``Γ_opt = 2·Re Π(ω_m)`` and ``δω_m = Im Π(ω_m)``.
    """
    lin = linearize(branch, params)
    G = params.mech.g0 * branch.alpha
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    M = lin.drift_matrix()
    chi = np.linalg.inv(-1j * w[:, None, None] * np.eye(2) - M)
    drive_in = np.array([-1j * G, 1j * np.conj(G)])        # cavity forcing per unit x = c + c†
    pick_out = np.array([-1j * np.conj(G), -1j * G])       # force on c from (d, d†)
    pi = -np.einsum("i,wij,j->w", pick_out, chi, drive_in)
    return pi if np.ndim(omega) else pi[0]


def backaction_quantum_noise(branch: SteadyStateBranch, params: SystemParams) -> BackactionPoint:
    """Backaction from the scattering rates; raises InstabilityError if ``Γ_eff ≤ 0``."""
    params = validate(params)
    mech = params.mech
    lin = linearize(branch, params)
    s_minus, s_plus = s_nn(lin, np.array([-mech.omega_m, mech.omega_m]))
    g2 = mech.g0**2
    gamma_opt = g2 * (s_plus - s_minus)
    gamma_eff = mech.gamma_m + gamma_opt
    if not gamma_eff > 0:
        raise InstabilityError(f"parametric instability: no mechanical steady state "
                               f"(gamma_eff = {gamma_eff:.4g} rad/s at detuning {branch.detuning:.6g} rad/s)")
    n_m = (mech.gamma_m * mech.n_th + g2 * s_minus) / gamma_eff
    spring = float(np.imag(cavity_self_energy(branch, params, mech.omega_m)))
    return BackactionPoint(detuning=branch.detuning, branch=branch.label, n_c=branch.n_c, n_m=float(n_m),
                           gamma_eff=float(gamma_eff), delta_omega_m=spring, gamma_opt=float(gamma_opt),
                           method=QUANTUM_NOISE)


def drift_matrix_4x4(branch: SteadyStateBranch, params: SystemParams) -> np.ndarray:
    """Linearized drift matrix over ``(d, d†, c, c†)``."""
    lin = linearize(branch, params)
    mech = params.mech
    G = mech.g0 * branch.alpha
    A = np.zeros((4, 4), dtype=complex)
    A[:2, :2] = lin.drift_matrix()
    A[0, 2:] = -1j * G
    A[1, 2:] = 1j * np.conj(G)
    A[2, 0], A[2, 1] = -1j * np.conj(G), -1j * G
    A[3, 0], A[3, 1] = 1j * np.conj(G), 1j * G
    A[2, 2] = -1j * mech.omega_m - mech.gamma_m / 2
    A[3, 3] = 1j * mech.omega_m - mech.gamma_m / 2
    return A


def mechanical_eigenvalue(branch: SteadyStateBranch, params: SystemParams) -> complex:
    """The eigenvalue of the 4x4 drift matrix belonging to the mechanical mode ``c``.

    Chosen by the weight of its eigenvector on the ``(c, c†)`` subspace;
    of the two mechanical-like eigenvalues the one rotating as ``e^{−iωt}``
    is returned. Raises InstabilityError if any eigenvalue has a positive
    real part.
    """
    A = drift_matrix_4x4(branch, params)
    vals, vecs = np.linalg.eig(A)
    weight = np.sum(np.abs(vecs[2:, :]) ** 2, axis=0) / np.sum(np.abs(vecs) ** 2, axis=0)
    bad = np.nonzero(vals.real > 0)[0]
    if bad.size:
        j = bad[np.argmax(vals.real[bad])]
        mode = "mechanical" if weight[j] > 0.5 else "cavity"
        raise InstabilityError(f"unstable {mode}-like mode: eigenvalue {vals[j]:.6g} "
                               f"(detuning {branch.detuning:.6g} rad/s)")
    mech_idx = np.argsort(weight)[-2:]
    j = mech_idx[np.argmin(vals[mech_idx].imag)]
    return complex(vals[j])


def backaction_eigenvalue(branch: SteadyStateBranch, params: SystemParams) -> BackactionPoint:
    """Backaction from the exact linearized eigenvalue (no weak-coupling expansion).

    Phonon number uses the rate form with the eigenvalue linewidth.
    """
    params = validate(params)
    mech = params.mech
    lam = mechanical_eigenvalue(branch, params)
    omega_eff = abs(lam.imag)
    gamma_eff = -2.0 * lam.real
    if not gamma_eff > 0:
        raise InstabilityError(f"parametric instability: no mechanical steady state "
                               f"(gamma_eff = {gamma_eff:.4g} rad/s)")
    lin = linearize(branch, params)
    s_minus = s_nn(lin, -mech.omega_m)
    n_m = (mech.gamma_m * mech.n_th + mech.g0**2 * s_minus) / gamma_eff
    return BackactionPoint(detuning=branch.detuning, branch=branch.label, n_c=branch.n_c, n_m=float(n_m),
                           gamma_eff=float(gamma_eff), delta_omega_m=float(omega_eff - mech.omega_m),
                           gamma_opt=float(gamma_eff - mech.gamma_m), method=EIGENVALUE)


def evaluate_point(branch: Optional[SteadyStateBranch], params: SystemParams, method: str = QUANTUM_NOISE,
                   detuning: Optional[float] = None) -> BackactionPoint:
    """Backaction at one point, folding failures into an invalid point instead of raising."""
    if branch is None:
        return BackactionPoint(detuning=float(detuning), branch=None, valid=False, method=method,
                               reason="branch-absent")
    if not branch.stable:
        return BackactionPoint(detuning=branch.detuning, branch=branch.label, valid=False, method=method,
                               reason="branch-unstable")
    use = method
    if method == QUANTUM_NOISE and not weak_coupling(branch, params):
        use = EIGENVALUE
    try:
        if use == QUANTUM_NOISE:
            return backaction_quantum_noise(branch, params)
        return backaction_eigenvalue(branch, params)
    except InstabilityError as exc:
        return BackactionPoint(detuning=branch.detuning, branch=branch.label, valid=False, method=use,
                               reason=f"instability: {exc}")


def cooling_trace(params: SystemParams, r, grid: Sequence[float], direction: Optional[str] = None,
                  branch_policy: str = "sweep", method: str = QUANTUM_NOISE) -> CoolingTrace:
    """Branch-resolved backaction along a detuning sweep.

    ``r`` is the drive ratio n_in/n_bi (or a :class:`DriveParams`).
    ``branch_policy="sweep"`` follows the branch selected by the sweep
    direction; ``"low"``/``"high"`` pin a branch label and mark points where
    it does not exist as invalid.
    """
    params = validate(params)
    if method not in (QUANTUM_NOISE, EIGENVALUE):
        raise ValueError(f"unknown method {method!r}")
    drive = r if isinstance(r, DriveParams) else DriveParams(r=float(r))
    if not (drive.r is None or drive.r > 0):
        raise ValueError("r must be > 0")
    grid = np.asarray(grid, dtype=float)
    jumps: List[int] = []
    if branch_policy == "sweep":
        sweep = hysteresis_sweep(params, drive, grid, direction)
        branches = sweep.branches
        jumps = sweep.jumps
        direction = sweep.direction
    elif branch_policy in ("low", "high"):
        window = bistable_window(params, drive) if params.cavity.kerr != 0 else None
        branches = []
        for d in grid:
            roots = solve_steady_states(params, drive.at(d), window=window)
            match = [b for b in roots if b.label == branch_policy]
            branches.append(match[0] if match else None)
        direction = direction or "none"
    else:
        raise ValueError(f"unknown branch_policy {branch_policy!r}")
    if method == QUANTUM_NOISE and any(b is not None and not weak_coupling(b, params) for b in branches):
        warnings.warn("weak-coupling guard failed at some points; eigenvalue method used there", stacklevel=2)
    points = [evaluate_point(b, params, method, detuning=d) for b, d in zip(branches, grid)]
    ratio = drive.r if drive.r is not None else float("nan")
    return CoolingTrace(points=points, direction=direction, r=ratio, method=method, jumps=jumps)


def quantum_noise_arrays(params: SystemParams, F, detunings, direction: str):
    """Vectorized quantum-noise backaction along a sweep, for use inside fit loops.

    Returns ``(n_c, n_m, gamma_eff)``; ``n_m`` and ``gamma_eff`` are NaN where
    ``gamma_eff ≤ 0``. Branch following as in :func:`branch_photon_numbers`.
    """
    from .steadystate import branch_photon_numbers

    cav, mech = params.cavity, params.mech
    kappa, K = cav.kappa, cav.kerr
    d = np.asarray(detunings, dtype=float)
    n = branch_photon_numbers(kappa, K, F, d, direction)
    dbar = d + K * n
    dtil = d + 2.0 * K * n
    w = np.array([-mech.omega_m, mech.omega_m])[:, None]
    D = (kappa / 2 - 1j * w) ** 2 + dtil**2 - (K * n) ** 2
    s = kappa * n * (kappa**2 / 4 + (w - dbar) ** 2) / np.abs(D) ** 2
    g2 = mech.g0**2
    gamma_eff = mech.gamma_m + g2 * (s[1] - s[0])
    ok = gamma_eff > 0
    n_m = np.where(ok, (mech.gamma_m * mech.n_th + g2 * s[0]) / np.where(ok, gamma_eff, 1.0), np.nan)
    return n, n_m, np.where(ok, gamma_eff, np.nan)


def effective_kerr(params: SystemParams) -> float:
    """Kerr constant including the optomechanically induced part, ``K + 2g0²ω_m/(ω_m² + Γ_m²/4)``."""
    c, m = params.cavity, params.mech
    return c.kerr + 2.0 * m.g0**2 * m.omega_m / (m.omega_m**2 + m.gamma_m**2 / 4.0)
