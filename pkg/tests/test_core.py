import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.constants import hbar, k as k_B

from optokerr.core import (CavityParams, ConfigError, DriveParams, MechParams, SystemParams, ValidatedParams,
                           ValidationError, angular_to_hz, as_dict, hz_to_angular, paper_device,
                           params_from_config, params_to_config, read_config, temperature_from_occupation,
                           thermal_occupation, validate)

BASE_CFG = """\
[cavity]
freq_hz = 8.1e9
kappa_c_hz = 1.4e6
kappa_i_hz = 1.4e6
kerr_hz = 14e3

[mech]
freq_hz = 287.3e3
gamma_hz = 0.4
g0_hz = 99

[bath]
temp_mk = 267
"""


def test_hz_to_angular_examples():
    assert hz_to_angular(0.0) == 0.0
    assert hz_to_angular(287.3e3) == 2 * math.pi * 287300
    assert math.isclose(hz_to_angular(287.3e3), 1.80517e6, rel_tol=1e-5)
    f = 8.1e9
    assert abs(angular_to_hz(hz_to_angular(f)) - f) <= math.ulp(f)


@given(st.floats(min_value=1e-300, max_value=1e300, allow_nan=False, allow_infinity=False))
def test_hz_round_trip_within_one_ulp(f):
    assert abs(angular_to_hz(hz_to_angular(f)) - f) <= math.ulp(f)


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_hz_to_angular_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        hz_to_angular(bad)


def test_thermal_occupation_examples():
    w = hz_to_angular(287.3e3)
    assert thermal_occupation(0.0, w) == 0.0
    assert math.isclose(thermal_occupation(0.150, w), 1.09e4, rel_tol=0.01)
    assert math.isclose(thermal_occupation(0.267, w), 1.94e4, rel_tol=0.01)
    # the Bose factor differs from k_B·T/ħω by about −1/2 at high temperature
    assert math.isclose(thermal_occupation(0.267, w, exact=True), thermal_occupation(0.267, w) - 0.5, rel_tol=1e-6)
    with pytest.raises(ValueError):
        thermal_occupation(0.1, 0.0)


@given(st.floats(min_value=0.0, max_value=1e3), st.floats(min_value=1.0, max_value=1e12))
def test_thermal_occupation_is_linear(T, w):
    assert thermal_occupation(2 * T, w) == 2 * thermal_occupation(T, w)
    assert math.isclose(temperature_from_occupation(thermal_occupation(T, w), w), T, rel_tol=1e-12, abs_tol=1e-300)


def test_thermal_occupation_matches_boltzmann_constant():
    w = 1e6
    assert thermal_occupation(1.0, w) == pytest.approx(k_B / (hbar * w), rel=1e-15)


def test_paper_device_is_valid():
    p = paper_device()
    assert isinstance(p, ValidatedParams)
    assert math.isclose(angular_to_hz(p.cavity.kappa), 2.8e6, rel_tol=1e-12)
    assert math.isclose(angular_to_hz(p.cavity.kerr), 14e3, rel_tol=1e-12)


def _params(**kw):
    cav = dict(omega_c=1e3, kappa_c=1.0, kappa_i=0.0, kerr=0.3)
    mech = dict(omega_m=1.0, gamma_m=1e-3, g0=1e-3, n_th=0.0)
    for k, v in kw.items():
        (cav if k in cav else mech)[k] = v
    return SystemParams(CavityParams(**cav), MechParams(**mech))


def test_validate_reports_every_violation():
    with pytest.raises(ValidationError) as exc:
        validate(_params(kappa_c=0.0, omega_m=-1.0, n_th=-2.0))
    fields = [f for f, _, _ in exc.value.violations]
    assert fields == ["kappa_c", "omega_m", "n_th"]
    assert "kappa_c must be > 0" in str(exc.value)
    values = [v for _, v, _ in exc.value.violations]
    assert values == [0.0, -1.0, -2.0]


def test_validate_rejects_non_finite():
    with pytest.raises(ValidationError, match="kerr must be finite"):
        validate(_params(kerr=math.nan))


def test_validate_warns_for_broad_mechanics():
    with pytest.warns(UserWarning, match="omega_m/10"):
        p = validate(_params(gamma_m=1.0, omega_m=1.0))
    assert isinstance(p, ValidatedParams)


def test_validate_is_idempotent():
    p = validate(_params())
    assert validate(p) is p
    assert validate(p) == p


def test_drive_params_requires_exactly_one_source():
    with pytest.raises(ValidationError):
        DriveParams(detuning=0.0)
    with pytest.raises(ValidationError):
        DriveParams(n_in=1.0, r=1.0)
    with pytest.raises(ValidationError):
        DriveParams(n_in=-1.0)
    with pytest.raises(ValidationError, match="requires kerr > 0"):
        DriveParams(r=1.0).drive_term(CavityParams(1e3, 1.0, 0.0, 0.0))


def test_drive_ratio_is_independent_of_kappa_c():
    a = CavityParams(1e3, 0.2, 0.8, 0.3)
    b = CavityParams(1e3, 0.9, 0.1, 0.3)
    d = DriveParams(r=1.7)
    assert d.drive_term(a) == d.drive_term(b)
    assert math.isclose(d.drive_term(a), 1.7 / (3 * math.sqrt(3) * 0.3), rel_tol=1e-15)


def test_config_round_trip_is_bit_exact():
    p = params_from_config(BASE_CFG)
    text = params_to_config(p)
    q = params_from_config(text)
    assert as_dict(q) == as_dict(p)
    assert params_to_config(q) == text


@given(st.floats(min_value=1e-3, max_value=1e11), st.floats(min_value=1e-3, max_value=1e8),
       st.floats(min_value=0.0, max_value=1e8), st.floats(min_value=-1e6, max_value=1e6),
       st.floats(min_value=1e-3, max_value=1e7), st.floats(min_value=0.0, max_value=1e7))
def test_config_round_trip_property(fc, kc, ki, kerr, fm, n_th):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = validate(SystemParams(
            CavityParams(hz_to_angular(fc), hz_to_angular(kc), hz_to_angular(ki), hz_to_angular(kerr)),
            MechParams(hz_to_angular(fm), hz_to_angular(fm * 1e-6), hz_to_angular(fm * 1e-4), n_th)))
        q = params_from_config(params_to_config(p))
    assert as_dict(q) == as_dict(p)


@given(st.floats(min_value=1e-3, max_value=1e12))
def test_config_round_trip_of_arbitrary_angular_values(omega):
    # not every double is 2π times some double; those come back within one ulp
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = validate(SystemParams(CavityParams(omega, 1.0, 0.0, 0.0), MechParams(1.0, 1e-3, omega, 0.0)))
        q = params_from_config(params_to_config(p))
    assert abs(q.cavity.omega_c - omega) <= math.ulp(omega)
    assert abs(q.mech.g0 - omega) <= math.ulp(omega)


def test_config_temperature_key():
    p = params_from_config(BASE_CFG)
    assert math.isclose(p.mech.n_th, thermal_occupation(0.267, hz_to_angular(287.3e3)), rel_tol=1e-15)


def test_config_errors_cite_line_and_key():
    bad = BASE_CFG.replace("kappa_c_hz = 1.4e6", "kappa_c_hz = fast")
    with pytest.raises(ConfigError) as exc:
        params_from_config(bad)
    assert exc.value.line == 3 and exc.value.key == "cavity.kappa_c_hz"
    assert "line 3" in str(exc.value) and "cavity.kappa_c_hz" in str(exc.value)

    neg = BASE_CFG.replace("gamma_hz = 0.4", "gamma_hz = -0.4")
    with pytest.raises(ConfigError) as exc:
        params_from_config(neg)
    assert exc.value.line == 9 and exc.value.key == "mech.gamma_hz"

    with pytest.raises(ConfigError, match="missing required key"):
        params_from_config(BASE_CFG.replace("g0_hz = 99\n", ""))
    with pytest.raises(ConfigError, match="only one of"):
        params_from_config(BASE_CFG + "n_th = 5\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        read_config("[cavity\nfreq_hz = 1\n")
