import math
import warnings

import pytest
from hypothesis import HealthCheck, settings

from optokerr.core import CavityParams, MechParams, SystemParams, hz_to_angular, validate

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_params(kappa_c=1.0, kappa_i=0.0, kerr=0.3, omega_c=1e3, omega_m=0.5, gamma_m=1e-3, g0=1e-4, n_th=0.0):
    """Dimensionless test system (κ = 1 by default)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return validate(SystemParams(CavityParams(omega_c=omega_c, kappa_c=kappa_c, kappa_i=kappa_i, kerr=kerr),
                                     MechParams(omega_m=omega_m, gamma_m=gamma_m, g0=g0, n_th=n_th)))


def fig1_params(kerr_hz):
    """Fig. 1 caption system: κ/2π = 3 MHz, ω_m/2π = 300 kHz, g0/2π = 1.7 kHz."""
    h = hz_to_angular
    return make_params(kappa_c=h(1.5e6), kappa_i=h(1.5e6), kerr=h(kerr_hz), omega_c=h(8e9), omega_m=h(300e3),
                       gamma_m=h(10.0), g0=h(1.7e3))


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def rel(a, b):
    return abs(a - b) / abs(b)


SQRT3 = math.sqrt(3.0)


#: criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
