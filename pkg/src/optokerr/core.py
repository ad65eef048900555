"""
Domain types, unit conventions and parameter I/O.

All rates and frequencies are angular (rad/s) inside the package. Ordinary
frequencies in Hz only appear at the I/O boundary (config files, CSV), where
they are converted with :func:`hz_to_angular` / :func:`angular_to_hz`.
"""
from __future__ import annotations

import configparser
import math
import re
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.constants import hbar, k as k_B

TWO_PI = 2.0 * math.pi


class OptoKerrError(Exception):
    """Base class for all package errors."""


class ValidationError(OptoKerrError, ValueError):
    """One or more parameter invariants are violated.

    ``violations`` holds ``(field, value, message)`` triples, one per failed
    invariant, so callers can report all of them at once.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(msg for _, _, msg in self.violations))


class ConvergenceError(OptoKerrError, RuntimeError):
    """A numerical procedure (root polish, fit, linear solve) did not converge."""


class InstabilityError(OptoKerrError, RuntimeError):
    """The requested state is dynamically unstable (no steady state exists)."""


class ConfigError(ValidationError):
    """Config file could not be parsed or holds invalid values."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__([(key, None, prefix + message)])


# ---------------------------------------------------------------------------
# unit conversions
# ---------------------------------------------------------------------------

def hz_to_angular(f):
    """Ordinary frequency (Hz) to angular frequency (rad/s)."""
    f_arr = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f_arr)):
        raise ValueError("frequency must be finite")
    out = TWO_PI * f_arr
    return float(out) if out.ndim == 0 else out


def angular_to_hz(omega):
    """Angular frequency (rad/s) to ordinary frequency (Hz)."""
    w_arr = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(w_arr)):
        raise ValueError("frequency must be finite")
    out = w_arr / TWO_PI
    return float(out) if out.ndim == 0 else out


def thermal_occupation(T, omega_m, exact=False):
    r"""Mean thermal phonon number of a mode at ``omega_m`` (rad/s) and temperature ``T`` (K).

    By default the high-temperature form :math:`k_B T / \hbar\omega_m` is
    returned. ``exact=True`` gives the Bose factor
    :math:`1/(e^{\hbar\omega_m/k_B T} - 1)` instead.
    """
    if not omega_m > 0:
        raise ValueError(f"omega_m must be > 0 (got {omega_m!r})")
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr < 0):
        raise ValueError("temperature must be >= 0")
    if exact:
        with np.errstate(divide="ignore", over="ignore"):
            x = hbar * omega_m / (k_B * T_arr)
            out = np.where(T_arr > 0, 1.0 / np.expm1(x), 0.0)
    else:
        out = k_B * T_arr / (hbar * omega_m)
    return float(out) if out.ndim == 0 else out


def temperature_from_occupation(n_th, omega_m):
    """Inverse of the high-temperature :func:`thermal_occupation`."""
    if not omega_m > 0:
        raise ValueError(f"omega_m must be > 0 (got {omega_m!r})")
    return n_th * hbar * omega_m / k_B


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CavityParams:
    """Cavity constants, all in rad/s (``kerr`` in rad/s per photon)."""
    omega_c: float
    kappa_c: float
    kappa_i: float
    kerr: float

    @property
    def kappa(self) -> float:
        return self.kappa_c + self.kappa_i


@dataclass(frozen=True)
class MechParams:
    """Mechanical mode: frequency, linewidth, single-photon coupling (rad/s) and bath occupation."""
    omega_m: float
    gamma_m: float
    g0: float
    n_th: float = 0.0


@dataclass(frozen=True)
class DriveParams:
    """Coherent drive at detuning ``Δ = ω_d − ω_c`` (rad/s).

    Exactly one of ``n_in`` (input photon flux, 1/s) or ``r`` (ratio to the
    critical flux) must be given. With ``r`` the drive term of the cubic is
    ``r·κ³/(3√3·K_ref)``, independent of ``κ_c``; ``reference_kerr`` lets
    several cavities share one physical drive power (defaults to the
    cavity's own Kerr constant).
    """
    detuning: float = 0.0
    n_in: Optional[float] = None
    r: Optional[float] = None
    sweep_direction: str = "none"
    reference_kerr: Optional[float] = None

    def __post_init__(self):
        if (self.n_in is None) == (self.r is None):
            raise ValidationError([("drive", None, "exactly one of n_in or r must be given")])
        if self.n_in is not None and not self.n_in >= 0:
            raise ValidationError([("n_in", self.n_in, "n_in must be >= 0")])
        if self.r is not None and not self.r >= 0:
            raise ValidationError([("r", self.r, "r must be >= 0")])
        if self.sweep_direction not in ("up", "down", "none"):
            raise ValidationError([("sweep_direction", self.sweep_direction,
                                    "sweep_direction must be one of up, down, none")])

    def drive_term(self, cavity: CavityParams) -> float:
        """Right-hand side ``κ_c·n_in`` of the steady-state cubic, in 1/s²."""
        if self.n_in is not None:
            return cavity.kappa_c * self.n_in
        kref = cavity.kerr if self.reference_kerr is None else self.reference_kerr
        if not kref > 0:
            raise ValidationError([("kerr", kref, "drive ratio r requires kerr > 0")])
        kappa = cavity.kappa
        return self.r * kappa**3 / (3.0 * math.sqrt(3.0) * kref)

    def input_flux(self, cavity: CavityParams) -> float:
        """Input photon flux n_in (1/s)."""
        if self.n_in is not None:
            return self.n_in
        return self.drive_term(cavity) / cavity.kappa_c

    def at(self, detuning: float) -> "DriveParams":
        return replace(self, detuning=float(detuning))


@dataclass(frozen=True)
class SystemParams:
    cavity: CavityParams
    mech: MechParams


class ValidatedParams(SystemParams):
    """Marker subclass returned by :func:`validate`."""


GAMMA_WARN_FRACTION = 0.1


def _collect_violations(params: SystemParams):
    c, m = params.cavity, params.mech
    out = []

    def check(name, value, ok, msg):
        if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value)):
            out.append((name, value, f"{name} must be finite (got {value!r})"))
        elif not ok:
            out.append((name, value, msg))

    check("omega_c", c.omega_c, c.omega_c > 0, "omega_c must be > 0")
    check("kappa_c", c.kappa_c, c.kappa_c > 0, "kappa_c must be > 0")
    check("kappa_i", c.kappa_i, c.kappa_i >= 0, "kappa_i must be >= 0")
    check("kerr", c.kerr, True, "")
    check("omega_m", m.omega_m, m.omega_m > 0, "omega_m must be > 0")
    check("gamma_m", m.gamma_m, m.gamma_m > 0, "gamma_m must be > 0")
    check("g0", m.g0, True, "")
    check("n_th", m.n_th, m.n_th >= 0, "n_th must be >= 0")
    return out


def validate(params: SystemParams) -> ValidatedParams:
    """Check every invariant of ``params``; raise :class:`ValidationError` listing all failures.

    Emits a warning (not an error) when ``gamma_m > omega_m/10``.
    """
    if isinstance(params, ValidatedParams):
        return params
    violations = _collect_violations(params)
    if violations:
        raise ValidationError(violations)
    m = params.mech
    if m.gamma_m > GAMMA_WARN_FRACTION * m.omega_m:
        warnings.warn(f"gamma_m = {m.gamma_m:.6g} rad/s exceeds omega_m/10; "
                      "weak-damping approximations may not hold", stacklevel=2)
    return ValidatedParams(cavity=params.cavity, mech=params.mech)


def paper_device(kerr_hz=14e3, T_eff=0.267) -> ValidatedParams:
    """The measured device: 8.1 GHz cavity, κ/2π = 2.8 MHz, 287.3 kHz cantilever.

    κ_c/κ is not known for this device; drives are specified via ``r``, for
    which it cancels, so the split used here is arbitrary.
    """
    omega_m = hz_to_angular(287.3e3)
    return validate(SystemParams(
        cavity=CavityParams(omega_c=hz_to_angular(8.1e9), kappa_c=hz_to_angular(1.4e6),
                            kappa_i=hz_to_angular(1.4e6), kerr=hz_to_angular(kerr_hz)),
        mech=MechParams(omega_m=omega_m, gamma_m=hz_to_angular(0.4), g0=hz_to_angular(99.0),
                        n_th=thermal_occupation(T_eff, omega_m)),
    ))


# ---------------------------------------------------------------------------
# config file I/O
# ---------------------------------------------------------------------------

#: (section, key) -> (object, attribute) for all frequency keys (Hz in file).
CONFIG_FREQ_KEYS = {
    ("cavity", "freq_hz"): ("cavity", "omega_c"),
    ("cavity", "kappa_c_hz"): ("cavity", "kappa_c"),
    ("cavity", "kappa_i_hz"): ("cavity", "kappa_i"),
    ("cavity", "kerr_hz"): ("cavity", "kerr"),
    ("mech", "freq_hz"): ("mech", "omega_m"),
    ("mech", "gamma_hz"): ("mech", "gamma_m"),
    ("mech", "g0_hz"): ("mech", "g0"),
}


def _exact_hz(omega: float) -> float:
    """A float ``f`` with ``2π·f == omega`` exactly, if one exists within a few ulp."""
    f = omega / TWO_PI
    cand = f
    for _ in range(4):
        if TWO_PI * cand == omega:
            return cand
        cand = np.nextafter(cand, math.inf)
    cand = f
    for _ in range(4):
        if TWO_PI * cand == omega:
            return cand
        cand = np.nextafter(cand, -math.inf)
    return f


def _fmt(x: float) -> str:
    return repr(float(x))


def _key_lines(text: str):
    """Map (section, key) -> 1-based line number, for error messages."""
    lines = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"^([A-Za-z0-9_.\-]+)\s*[=:]", s)
        if m and section is not None:
            lines[(section, m.group(1).lower())] = i
    return lines


def read_config(source: Union[str, Path]) -> configparser.ConfigParser:
    """Parse an INI-style config from a path or a string of text."""
    path = Path(source) if not (isinstance(source, str) and "\n" in source) else None
    text = path.read_text() if path is not None else source
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path) if path else "<string>")
    except configparser.ParsingError as exc:
        errors = getattr(exc, "errors", None)
        lineno = errors[0][0] if errors else getattr(exc, "lineno", None)
        raise ConfigError(f"cannot parse config: {exc.message.splitlines()[0]}", line=lineno) from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}", line=getattr(exc, "lineno", None)) from exc
    cp._optokerr_lines = _key_lines(text)  # noqa: SLF001 - error reporting only
    return cp


def config_float(cp: configparser.ConfigParser, section: str, key: str, default=None):
    lines = getattr(cp, "_optokerr_lines", {})
    if not cp.has_option(section, key):
        if default is not None:
            return default
        raise ConfigError("missing required key", key=f"{section}.{key}")
    raw = cp.get(section, key)
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"not a number: {raw!r}", line=lines.get((section, key)),
                          key=f"{section}.{key}") from None
    if not math.isfinite(value):
        raise ConfigError(f"not finite: {raw!r}", line=lines.get((section, key)), key=f"{section}.{key}")
    return value


def params_from_config(cp) -> ValidatedParams:
    """Build validated :class:`SystemParams` from the ``cavity``/``mech``/``bath`` sections."""
    if not isinstance(cp, configparser.ConfigParser):
        cp = read_config(cp)
    lines = getattr(cp, "_optokerr_lines", {})
    values = {"cavity": {}, "mech": {}}
    for (section, key), (obj, attr) in CONFIG_FREQ_KEYS.items():
        values[obj][attr] = hz_to_angular(config_float(cp, section, key))
    has_n = cp.has_option("bath", "n_th")
    has_t = cp.has_option("bath", "temp_mk")
    if has_n and has_t:
        raise ConfigError("give only one of bath.n_th or bath.temp_mk",
                          line=lines.get(("bath", "temp_mk")), key="bath.temp_mk")
    if has_n:
        n_th = config_float(cp, "bath", "n_th")
    elif has_t:
        n_th = thermal_occupation(config_float(cp, "bath", "temp_mk") * 1e-3, values["mech"]["omega_m"])
    else:
        n_th = 0.0
    params = SystemParams(cavity=CavityParams(**values["cavity"]),
                          mech=MechParams(n_th=n_th, **values["mech"]))
    try:
        return validate(params)
    except ValidationError as exc:
        reverse = {v[1]: k for k, v in CONFIG_FREQ_KEYS.items()}
        reverse["n_th"] = ("bath", "n_th")
        first = exc.violations[0]
        sk = reverse.get(first[0])
        raise ConfigError("; ".join(m for _, _, m in exc.violations),
                          line=lines.get(sk) if sk else None,
                          key=".".join(sk) if sk else first[0]) from exc


def params_to_config(params: SystemParams) -> str:
    """Serialize to config text; floats are written so that reading back is bit-identical."""
    out = []
    for section in ("cavity", "mech"):
        out.append(f"[{section}]")
        for (sec, key), (obj, attr) in CONFIG_FREQ_KEYS.items():
            if sec == section:
                omega = getattr(getattr(params, obj), attr)
                out.append(f"{key} = {_fmt(_exact_hz(omega))}")
        out.append("")
    out.append("[bath]")
    out.append(f"n_th = {_fmt(params.mech.n_th)}")
    return "\n".join(out) + "\n"


def as_dict(obj) -> dict:
    """Flat dict of a (possibly nested) frozen dataclass, for headers and reports."""
    res = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if hasattr(v, "__dataclass_fields__"):
            for k2, v2 in as_dict(v).items():
                res[f"{f.name}.{k2}"] = v2
        else:
            res[f.name] = v
    return res
