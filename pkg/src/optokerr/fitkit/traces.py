"""Measured-trace containers, their CSV formats, and the common fit report."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core import ValidationError
from ..io import read_csv, write_csv

DEFAULT_ATTENUATION_UNCERTAINTY_DB = 2.0


@dataclass(frozen=True, eq=False)
class S21Trace:
    """Complex transmission over a frequency grid in Hz, in the order it was swept.

    ``power_dbm`` is the generator power; the power reaching the cavity is
    ``power_dbm − attenuation_db``, uncertain by ``attenuation_uncertainty_db``.
    """
    freq_hz: np.ndarray
    s21: np.ndarray
    power_dbm: Optional[float] = None
    attenuation_db: float = 0.0
    attenuation_uncertainty_db: float = DEFAULT_ATTENUATION_UNCERTAINTY_DB
    direction: str = "none"

    def __post_init__(self):
        f = np.asarray(self.freq_hz, dtype=float)
        z = np.asarray(self.s21, dtype=complex)
        object.__setattr__(self, "freq_hz", f)
        object.__setattr__(self, "s21", z)
        bad = []
        if f.ndim != 1 or f.shape != z.shape:
            bad.append(("freq_hz", f.shape, "frequency and S21 arrays must be 1-D of equal length"))
        elif f.size > 1:
            df = np.diff(f)
            if not (np.all(df > 0) or np.all(df < 0)):
                bad.append(("freq_hz", None, "frequency grid must be strictly monotone"))
        if not np.all(np.isfinite(f)) or not np.all(np.isfinite(z)):
            bad.append(("s21", None, "trace contains non-finite values"))
        if self.direction not in ("up", "down", "none"):
            bad.append(("direction", self.direction, "direction must be up, down or none"))
        if self.direction == "up" and f.size > 1 and not np.all(np.diff(f) > 0):
            bad.append(("direction", self.direction, "up-sweep trace must have increasing frequency"))
        if self.direction == "down" and f.size > 1 and not np.all(np.diff(f) < 0):
            bad.append(("direction", self.direction, "down-sweep trace must have decreasing frequency"))
        if bad:
            raise ValidationError(bad)

    def power_at_cavity(self, attenuation_offset_db: float = 0.0) -> float:
        """Power reaching the cavity in W, optionally with a shifted attenuation."""
        if self.power_dbm is None:
            raise ValidationError([("power_dbm", None, "trace has no power provenance")])
        dbm = self.power_dbm - self.attenuation_db - attenuation_offset_db
        return 1e-3 * 10.0 ** (dbm / 10.0)

    def to_csv(self, path=None) -> str:
        hdr = {"power_dbm": self.power_dbm, "attenuation_db": self.attenuation_db,
               "attenuation_uncertainty_db": self.attenuation_uncertainty_db, "direction": self.direction}
        rows = zip(self.freq_hz, self.s21.real, self.s21.imag)
        return write_csv(path, ["freq_hz", "re_s21", "im_s21"], rows, header=hdr)

    @classmethod
    def from_csv(cls, source) -> "S21Trace":
        meta, cols = read_csv(source)

        def num(key, default=None):
            v = meta.get(key, "")
            return float(v) if v not in ("", "None") else default

        return cls(freq_hz=cols["freq_hz"], s21=cols["re_s21"] + 1j * cols["im_s21"],
                   power_dbm=num("power_dbm"), attenuation_db=num("attenuation_db", 0.0),
                   attenuation_uncertainty_db=num("attenuation_uncertainty_db", DEFAULT_ATTENUATION_UNCERTAINTY_DB),
                   direction=meta.get("direction", "none") or "none")


@dataclass(frozen=True, eq=False)
class PsdTrace:
    """Power spectral density around the mechanical resonance, grid in Hz."""
    freq_hz: np.ndarray
    psd: np.ndarray
    averages: Optional[int] = None
    rbw_hz: Optional[float] = None

    def __post_init__(self):
        f = np.asarray(self.freq_hz, dtype=float)
        s = np.asarray(self.psd, dtype=float)
        object.__setattr__(self, "freq_hz", f)
        object.__setattr__(self, "psd", s)
        bad = []
        if f.ndim != 1 or f.shape != s.shape:
            bad.append(("freq_hz", f.shape, "frequency and PSD arrays must be 1-D of equal length"))
        elif f.size > 1 and not np.all(np.diff(f) > 0):
            bad.append(("freq_hz", None, "frequency grid must be strictly increasing"))
        if not np.all(np.isfinite(s)):
            bad.append(("psd", None, "PSD contains non-finite values"))
        elif np.any(s < 0):
            bad.append(("psd", float(s.min()), "PSD must be >= 0"))
        if bad:
            raise ValidationError(bad)

    def to_csv(self, path=None) -> str:
        return write_csv(path, ["freq_hz", "psd"], zip(self.freq_hz, self.psd),
                         header={"averages": self.averages, "rbw_hz": self.rbw_hz})

    @classmethod
    def from_csv(cls, source) -> "PsdTrace":
        meta, cols = read_csv(source)
        avg = meta.get("averages", "")
        rbw = meta.get("rbw_hz", "")
        return cls(freq_hz=cols["freq_hz"], psd=cols["psd"],
                   averages=int(float(avg)) if avg not in ("", "None") else None,
                   rbw_hz=float(rbw) if rbw not in ("", "None") else None)


def relaxation_to_csv(t_s, delta_f_hz, path=None) -> str:
    return write_csv(path, ["t_s", "delta_f_hz"], zip(t_s, delta_f_hz))


def relaxation_from_csv(source) -> Tuple[np.ndarray, np.ndarray]:
    _, cols = read_csv(source)
    return cols["t_s"], cols["delta_f_hz"]


@dataclass
class FitReport:
    """Rows of ``(parameter, value, stderr, unit)`` plus residuals, written as CSV."""
    rows: List[Tuple[str, float, Optional[float], str]]
    residuals: Optional[np.ndarray] = None
    residual_axis: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def value(self, name: str) -> float:
        for p, v, _, _ in self.rows:
            if p == name:
                return v
        raise KeyError(name)

    def to_csv(self, path=None, header: Optional[dict] = None) -> str:
        hdr = dict(self.meta)
        hdr.update(header or {})
        return write_csv(path, ["parameter", "value", "stderr", "unit"], self.rows, header=hdr)

    def residuals_to_csv(self, path=None, axis_name: str = "x") -> str:
        r = np.asarray(self.residuals)
        x = self.residual_axis if self.residual_axis is not None else np.arange(r.size)
        if np.iscomplexobj(r):
            return write_csv(path, [axis_name, "re_residual", "im_residual"], zip(x, r.real, r.imag))
        return write_csv(path, [axis_name, "residual"], zip(x, r))


def check_covariance(cov: np.ndarray, names: Sequence[str] = ()) -> np.ndarray:
    """Symmetrize and verify positive semidefiniteness (eigenvalues ≥ −1e-10·trace)."""
    cov = 0.5 * (cov + cov.T)
    if cov.size and np.all(np.isfinite(cov)):
        ev = np.linalg.eigvalsh(cov)
        if ev[0] < -1e-10 * max(np.trace(cov), 0.0):
            raise ValidationError([("covariance", float(ev[0]), "covariance matrix is not positive semidefinite")])
    return cov


def covariance_from_jacobian(J: np.ndarray, residuals: np.ndarray, scale: bool = True) -> np.ndarray:
    """``s²·(JᵀJ)⁻¹`` by SVD, with ``s²`` the reduced chi-square when ``scale`` is set."""
    m, n = J.shape
    # columns can differ by many orders of magnitude; equilibrate before the SVD
    norms = np.linalg.norm(J, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    _, s, vt = np.linalg.svd(J / norms, full_matrices=False)
    thresh = np.finfo(float).eps * max(J.shape) * (s[0] if s.size else 0.0)
    inv = np.where(s > thresh, 1.0 / np.where(s > thresh, s, 1.0) ** 2, 0.0)
    cov = ((vt.T * inv) @ vt) / np.outer(norms, norms)
    if scale:
        dof = max(m - n, 1)
        cov = cov * float(np.sum(np.abs(residuals) ** 2)) / dof
    return 0.5 * (cov + cov.T)
