r"""
Truncated Fock-space reference solution for the driven Kerr cavity (no mechanics).

The Lindblad generator of

.. math::

    H/\hbar = -\Delta\,\hat n - \tfrac{K}{2}\hat n(\hat n - 1) + \alpha_d(a + a^\dagger),
    \qquad L_1 = \sqrt{\kappa}\,a

is assembled as a sparse superoperator acting on column-stacked density
matrices. The steady state is its null vector, found by shifted inverse
iteration. The number-fluctuation spectrum follows from the quantum
regression theorem,

.. math::

    S_{nn}[\omega] = 2\,\mathrm{Re}\,\mathrm{Tr}[\delta\hat n\,X(\omega)],
    \qquad (i\omega + \mathcal{L})X = -\delta\hat n\,\rho_{ss},

which reproduces the linear-cavity Lorentzian exactly. The linear solve is
done on the system bordered by the trace constraint ``Tr X = 0``, which is
non-singular at every ω including ω = 0.

Only the monostable regime is meaningful here: with two classical branches
the quantum steady state is a tunnelling mixture of both.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ConvergenceError, DriveParams, SystemParams, ValidationError, validate
from .steadystate import C_CRIT, SQRT3

TOP_LEVELS = 5
TOP_POPULATION_TOL = 1e-8
MAX_CUTOFF = 400
MONOSTABLE_R_LIMIT = 0.8
_SHIFT = 1e-8           # inverse-iteration shift, in units of kappa
_RESIDUAL_RTOL = 1e-10  # ‖L ρ‖ relative to ‖L‖
_SOLVE_RTOL = 1e-8


@dataclass(frozen=True)
class FockProblem:
    """Driven Kerr cavity truncated to Fock levels ``0..cutoff``.

    ``drive_amp`` is the real amplitude α_d of the coherent drive term, so
    the classical photon number solves ``n[(Δ + K n)² + κ²/4] = α_d²``.
    """
    cutoff: int
    detuning: float
    kerr: float
    drive_amp: float
    kappa: float = 1.0

    def __post_init__(self):
        bad = []
        if not (isinstance(self.cutoff, (int, np.integer)) and self.cutoff >= 1):
            bad.append(("cutoff", self.cutoff, "cutoff must be an integer >= 1"))
        for name in ("detuning", "kerr", "drive_amp", "kappa"):
            v = getattr(self, name)
            if not math.isfinite(v):
                bad.append((name, v, f"{name} must be finite"))
        if not self.kappa > 0:
            bad.append(("kappa", self.kappa, "kappa must be > 0"))
        if bad:
            raise ValidationError(bad)

    @classmethod
    def from_classical(cls, n_c: float, detuning: float, kerr: float, kappa: float = 1.0,
                       cutoff: Optional[int] = None) -> "FockProblem":
        """Problem whose classical steady state holds ``n_c`` photons."""
        amp = math.sqrt(n_c * ((detuning + kerr * n_c) ** 2 + kappa**2 / 4.0))
        return cls(cutoff=cutoff or default_cutoff(n_c), detuning=float(detuning), kerr=float(kerr),
                   drive_amp=amp, kappa=float(kappa))

    @classmethod
    def from_params(cls, params: SystemParams, drive: DriveParams, cutoff: Optional[int] = None,
                    override: bool = False) -> "FockProblem":
        """Problem for the cavity part of ``params`` (all decay channels lumped into κ)."""
        params = validate(params)
        cav = params.cavity
        F = drive.drive_term(cav)
        check_monostable(cav.kappa, cav.kerr, drive.detuning, F, override=override)
        prob = cls(cutoff=1, detuning=float(drive.detuning), kerr=cav.kerr, drive_amp=math.sqrt(F),
                   kappa=cav.kappa)
        return replace(prob, cutoff=cutoff or default_cutoff(prob.classical_n()))

    @property
    def dim(self) -> int:
        return self.cutoff + 1

    def classical_n(self) -> float:
        """Largest classical photon number for these parameters."""
        coeffs = [self.kerr**2, 2 * self.detuning * self.kerr, self.detuning**2 + self.kappa**2 / 4,
                  -self.drive_amp**2]
        if self.kerr == 0:
            return self.drive_amp**2 / (self.detuning**2 + self.kappa**2 / 4)
        r = np.roots(coeffs)
        r = r[np.abs(r.imag) <= 1e-9 * np.maximum(1.0, np.abs(r))].real
        return float(np.max(r))

    @cached_property
    def annihilation(self) -> sp.csr_matrix:
        n = np.arange(self.dim)
        return sp.diags(np.sqrt(n[1:].astype(float)), 1, format="csr")

    @cached_property
    def number(self) -> sp.csr_matrix:
        return sp.diags(np.arange(self.dim, dtype=float), format="csr")

    @cached_property
    def hamiltonian(self) -> sp.csr_matrix:
        n = np.arange(self.dim, dtype=float)
        a = self.annihilation
        diag = -self.detuning * n - 0.5 * self.kerr * n * (n - 1.0)
        H = (sp.diags(diag) + self.drive_amp * (a + a.T)).tocsr()
        herm = abs(H - H.conj().T).max() if H.nnz else 0.0
        if herm > 1e-14 * max(1.0, abs(H).max()):
            raise ValidationError([("hamiltonian", herm, "hamiltonian is not Hermitian")])
        return H

    @cached_property
    def collapse(self) -> sp.csr_matrix:
        return math.sqrt(self.kappa) * self.annihilation

    @cached_property
    def liouvillian(self) -> sp.csc_matrix:
        """Superoperator on column-stacked ρ: ``vec(AρB) = (Bᵀ ⊗ A) vec(ρ)``."""
        H, c = self.hamiltonian, self.collapse
        eye = sp.identity(self.dim, format="csr")
        cdc = (c.conj().T @ c).tocsr()
        L = (-1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
             + sp.kron(c.conj(), c) - 0.5 * sp.kron(eye, cdc) - 0.5 * sp.kron(cdc.T, eye))
        return L.tocsc()


@dataclass(frozen=True)
class SteadyDensity:
    rho: np.ndarray
    mean_n: float
    variance: float
    problem: FockProblem
    residual: float = 0.0

    @property
    def top_population(self) -> float:
        """Total population of the highest Fock levels kept."""
        return float(np.sum(np.diag(self.rho).real[-TOP_LEVELS:]))


@dataclass
class ConvergenceReport:
    cutoffs: List[int]
    mean_n: List[float]
    s_probe: np.ndarray
    probe_omega: np.ndarray
    change_n: float
    change_s: float
    monotone_n: bool
    converged: bool
    tolerance: float = 1e-3
    notes: List[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["cutoff  mean_n  " + "  ".join(f"S({w:.4g})" for w in self.probe_omega)]
        for N, n, s in zip(self.cutoffs, self.mean_n, self.s_probe):
            lines.append(f"{N:d}  {n!r}  " + "  ".join(repr(float(v)) for v in s))
        lines.append(f"max relative change mean_n: {self.change_n:.3e}")
        lines.append(f"max relative change S_nn: {self.change_s:.3e}")
        lines.append(f"mean_n monotone: {self.monotone_n}")
        lines.append(f"converged (tol {self.tolerance:g}): {self.converged}")
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def default_cutoff(n_c: float) -> int:
    """A starting cutoff that comfortably contains a coherent state of ``n_c`` photons."""
    return int(math.ceil(n_c + 8.0 * math.sqrt(max(n_c, 0.0)) + 15))


def monostable_ratio(kappa: float, kerr: float, drive_term: float) -> float:
    """Drive in units of the critical drive, ``|K|·F/κ³ / C_crit``."""
    return abs(kerr) * drive_term / kappa**3 / C_CRIT


def check_monostable(kappa: float, kerr: float, detuning: float, drive_term: float, override: bool = False):
    """Refuse drives that may sit in (or next to) the bistable regime.

    Two classical branches can only occur for ``−sgn(K)·Δ > √3κ/2``; on the
    other side the cubic has a single root at any drive, so the ``r < 0.8``
    limit is applied only there.
    """
    if override or kerr == 0:
        return
    r = monostable_ratio(kappa, kerr, drive_term)
    if r >= MONOSTABLE_R_LIMIT and -math.copysign(1.0, kerr) * detuning >= SQRT3 / 2 * kappa:
        raise ValidationError([("r", r, f"oracle is restricted to the monostable regime "
                                        f"(r = {r:.3g} >= {MONOSTABLE_R_LIMIT}); pass override to force")])


def _trace_vector(dim: int) -> np.ndarray:
    return np.eye(dim).ravel(order="F")


def _solve_once(problem: FockProblem, max_iter: int = 50) -> SteadyDensity:
    d = problem.dim
    L = problem.liouvillian
    tr = _trace_vector(d)
    if problem.drive_amp == 0.0:
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
        return SteadyDensity(rho=rho, mean_n=0.0, variance=0.0, problem=problem, residual=0.0)
    lu = spla.splu(L - _SHIFT * problem.kappa * sp.identity(d * d, format="csc"))
    x = np.zeros(d * d, dtype=complex)
    x[0] = 1.0
    for _ in range(max_iter):
        y = lu.solve(x)
        y /= tr @ y
        done = np.max(np.abs(y - x)) <= 1e-14 * np.max(np.abs(y))
        x = y
        if done:
            break
    rho = x.reshape(d, d, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    norm_L = spla.norm(L, 1)
    residual = float(np.max(np.abs(L @ rho.ravel(order="F"))))
    if not residual <= _RESIDUAL_RTOL * norm_L:
        raise ConvergenceError(f"steady state residual {residual:.3e} exceeds {_RESIDUAL_RTOL:g}·‖L‖ "
                               f"(cutoff {problem.cutoff})")
    evals = np.linalg.eigvalsh(rho)
    if evals[0] < -1e-12:
        raise ConvergenceError(f"steady state not positive: min eigenvalue {evals[0]:.3e}")
    n = np.arange(d, dtype=float)
    p = np.diag(rho).real
    mean = float(p @ n)
    var = float(p @ n**2 - mean**2)
    return SteadyDensity(rho=rho, mean_n=mean, variance=var, problem=problem, residual=residual)


def steady_density(problem: FockProblem, max_cutoff: int = MAX_CUTOFF, auto_grow: bool = True) -> SteadyDensity:
    """Steady state of the Liouvillian, growing the cutoff until the top levels are empty.

    The cutoff is accepted when the population of the top five Fock levels
    is below 1e-8. Raises ConvergenceError past ``max_cutoff``.
    """
    while True:
        if problem.cutoff > max_cutoff:
            raise ConvergenceError(f"cutoff {problem.cutoff} exceeds hard maximum {max_cutoff}")
        dens = _solve_once(problem)
        if not auto_grow or dens.top_population < TOP_POPULATION_TOL:
            return dens
        new = max(problem.cutoff + 10, int(math.ceil(1.5 * problem.cutoff)))
        if problem.cutoff < max_cutoff < new:
            new = max_cutoff
        problem = replace(problem, cutoff=new)


def _bordered(L: sp.csc_matrix, rho_vec: np.ndarray, tr: np.ndarray) -> sp.csc_matrix:
    col = sp.csc_matrix(rho_vec.reshape(-1, 1))
    row = sp.csr_matrix(tr.reshape(1, -1))
    return sp.bmat([[L, col], [row, None]], format="csc")


def oracle_s_nn(problem: FockProblem, density: SteadyDensity, omega, jobs: int = 1) -> np.ndarray:
    """Two-sided number spectrum S_nn[ω] (drive frame) by quantum regression.

    Each frequency needs one sparse LU factorization; ``jobs > 1`` spreads
    them over threads without changing the result.
    """
    if density.problem.cutoff != problem.cutoff:
        problem = density.problem
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if not np.all(np.isfinite(w)):
        raise ValueError("omega must be finite")
    d = problem.dim
    rho = density.rho
    dn = problem.number.toarray() - density.mean_n * np.eye(d)
    B = (dn @ rho).ravel(order="F")
    tr = _trace_vector(d)
    rho_vec = rho.ravel(order="F")
    L = problem.liouvillian
    dn_t = dn.T.ravel(order="F")  # Tr(δn X) = Σ_ij δn_ji X_ij
    eye = sp.identity(d * d, format="csc")
    rhs = np.concatenate([-B, [0.0]])

    def one(wk):
        A = _bordered((L + 1j * wk * eye).tocsc(), rho_vec, tr)
        x = spla.splu(A).solve(rhs)
        res = float(np.linalg.norm(A @ x - rhs))
        if not res <= _SOLVE_RTOL * max(np.linalg.norm(rhs), 1e-300) + 1e-300:
            raise ConvergenceError(f"regression solve failed at omega={wk!r}: residual {res:.3e}")
        return 2.0 * float(np.real(dn_t @ x[:-1]))

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = np.array(list(pool.map(one, w)))
    else:
        out = np.array([one(wk) for wk in w])
    return out if np.ndim(omega) else float(out[0])


def convergence_sweep(problem: FockProblem, probe_omega: Optional[Sequence[float]] = None,
                      steps: Sequence[int] = (0, 10, 20), tolerance: float = 1e-3) -> ConvergenceReport:
    """Re-solve at cutoffs ``N, N+10, N+20`` and report the changes in ⟨n̂⟩ and S_nn.

    Changes are relative, between consecutive cutoffs. Five probe frequencies
    default to ``κ·(−2, −1, 0, 1, 2)``.
    """
    if probe_omega is None:
        probe_omega = problem.kappa * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    probe_omega = np.asarray(probe_omega, dtype=float)
    cutoffs, means, spectra = [], [], []
    for s in steps:
        p = replace(problem, cutoff=problem.cutoff + int(s))
        dens = steady_density(p, auto_grow=False)
        cutoffs.append(p.cutoff)
        means.append(dens.mean_n)
        spectra.append(oracle_s_nn(p, dens, probe_omega))
    spectra = np.array(spectra)

    def rel(a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        scale = np.maximum(np.abs(a), np.abs(b))
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(scale > 0, np.abs(a - b) / np.where(scale > 0, scale, 1.0), 0.0)
        return float(np.max(r))

    change_n = max(rel(means[i], means[i + 1]) for i in range(len(means) - 1))
    change_s = max(rel(spectra[i], spectra[i + 1]) for i in range(len(means) - 1))
    diffs = np.diff(means)
    monotone = bool(np.all(diffs >= -1e-15) or np.all(diffs <= 1e-15))
    notes = []
    converged = max(change_n, change_s) <= tolerance
    if not converged:
        notes.append(f"NOT CONVERGED: change exceeds {tolerance:g}")
    return ConvergenceReport(cutoffs=cutoffs, mean_n=means, s_probe=spectra, probe_omega=probe_omega,
                             change_n=change_n, change_s=change_s, monotone_n=monotone,
                             converged=converged, tolerance=tolerance, notes=notes)


@dataclass
class OracleComparison:
    """Linearized vs Lindblad spectra on one grid."""
    omega: np.ndarray
    s_linear: np.ndarray
    s_oracle: np.ndarray
    mean_n: float
    n_classical: float
    cutoff: int

    @property
    def rel_error(self) -> np.ndarray:
        return np.abs(self.s_linear - self.s_oracle) / np.abs(self.s_oracle)

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_error))

    @property
    def mean_rel_error(self) -> float:
        return float(np.mean(self.rel_error))


def compare_linearized(n_c: float, detuning: float, kerr: float, omega, kappa: float = 1.0,
                       cutoff: Optional[int] = None, jobs: int = 1, override: bool = False) -> OracleComparison:
    """Oracle spectrum and the closed-form linearized spectrum at classical photon number ``n_c``."""
    from .core import CavityParams, MechParams
    from .spectrum import linearize, s_nn
    from .steadystate import solve_steady_states

    prob = FockProblem.from_classical(n_c, detuning, kerr, kappa=kappa, cutoff=cutoff)
    check_monostable(kappa, kerr, detuning, prob.drive_amp**2, override=override)
    dens = steady_density(prob)
    w = np.asarray(omega, dtype=float)
    s_or = oracle_s_nn(dens.problem, dens, w, jobs=jobs)
    # linearized model in the same units; mechanics irrelevant here
    params = validate(SystemParams(CavityParams(omega_c=1e3 * kappa, kappa_c=kappa, kappa_i=0.0, kerr=kerr),
                                   MechParams(omega_m=kappa, gamma_m=1e-3 * kappa, g0=0.0)))
    branches = solve_steady_states(params, DriveParams(detuning=detuning, n_in=prob.drive_amp**2 / kappa))
    br = max(branches, key=lambda b: b.n_c)
    s_lin = s_nn(linearize(br, params), w)
    return OracleComparison(omega=w, s_linear=np.atleast_1d(s_lin), s_oracle=np.atleast_1d(s_or),
                            mean_n=dens.mean_n, n_classical=br.n_c, cutoff=dens.problem.cutoff)
