import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from optokerr.core import DriveParams, InstabilityError, hz_to_angular
from optokerr.spectrum import (asymmetry_about_peak, linearize, rates_sweep, s_nn, s_nn_matrix, scattering_rates,
                               spectrum_trace)
from optokerr.steadystate import bistable_window, solve_steady_states

from conftest import fig1_params, make_params


def langevin_oracle(lin, w):
    """Test-local route: S(ω) = κ·[c·χ(ω)]₀·[c·χ(−ω)]₁ with c = (α*, α) and vacuum input."""
    M = lin.drift_matrix()
    a = lin.branch.alpha
    c = np.array([np.conj(a), a])
    out = []
    for x in np.atleast_1d(w):
        chi_p = np.linalg.inv(-1j * x * np.eye(2) - M)
        chi_m = np.linalg.inv(1j * x * np.eye(2) - M)
        out.append((lin.kappa * (c @ chi_p)[0] * (c @ chi_m)[1]).real)
    return np.array(out)


def branch(kerr=0.3, delta=-0.5, r=0.5, which=0, **kw):
    p = make_params(kerr=kerr, **kw)
    drive = DriveParams(detuning=delta, r=r, reference_kerr=0.3)
    return solve_steady_states(p, drive)[which], p


def test_linearize_zero_kerr():
    b, p = branch(kerr=0.0, delta=-0.7)
    lin = linearize(b, p)
    assert lin.delta_tilde == -0.7 and lin.lam == 0


@given(st.floats(min_value=-3, max_value=1), st.floats(min_value=0.05, max_value=4.0))
def test_lambda_magnitude(delta, r):
    b, p = branch(delta=delta, r=r)
    lin = linearize(b, p)
    assert abs(lin.lam) == pytest.approx(0.3 * b.n_c, rel=1e-12)


def test_unstable_middle_branch():
    p = make_params(kerr=0.3)
    roots = solve_steady_states(p, DriveParams(detuning=-1.5, r=3.0))
    mid = roots[1]
    assert mid.label == "middle" and not mid.stable
    lin = linearize(mid, p)
    assert np.max(np.linalg.eigvals(lin.drift_matrix()).real) > 0
    assert not lin.stable
    with pytest.raises(InstabilityError):
        s_nn(lin, 0.0)


@given(st.floats(min_value=-5, max_value=5), st.floats(min_value=0.01, max_value=50.0))
def test_zero_kerr_lorentzian(delta, n_in):
    p = make_params(kerr=0.0)
    (b,) = solve_steady_states(p, DriveParams(detuning=delta, n_in=n_in))
    w = np.linspace(-20, 20, 401)
    ref = b.n_c / (0.25 + (w + delta) ** 2)
    np.testing.assert_allclose(s_nn(linearize(b, p), w), ref, rtol=1e-12)


def test_resonant_anti_stokes_maximum():
    p = make_params(kerr=0.0, omega_m=10.0)
    (b,) = solve_steady_states(p, DriveParams(detuning=-10.0, n_in=5.0))
    assert s_nn(linearize(b, p), 10.0) == pytest.approx(4 * b.n_c / 1.0, rel=1e-12)


@given(st.floats(min_value=-4, max_value=1), st.floats(min_value=0.05, max_value=5.0),
       st.sampled_from([0, -1]), st.floats(min_value=-10, max_value=10))
def test_closed_form_equals_matrix_and_langevin_routes(delta, r, which, w):
    b, p = branch(delta=delta, r=r, which=which)
    assume(b.stable)
    lin = linearize(b, p)
    s = s_nn(lin, w)
    assert s == pytest.approx(float(s_nn_matrix(lin, w)), rel=1e-10)
    assert s == pytest.approx(float(langevin_oracle(lin, w)[0]), rel=1e-9)
    assert s >= 0


def test_cross_check_mode():
    b, p = branch(delta=-1.0, r=0.8)
    lin = linearize(b, p)
    w = np.linspace(-5, 5, 101)
    np.testing.assert_array_equal(s_nn(lin, w, cross_check=True), s_nn(lin, w))


def test_non_finite_omega_rejected():
    b, p = branch()
    with pytest.raises(ValueError):
        s_nn(linearize(b, p), [0.0, math.inf])


def test_asymmetry_onset():
    w = np.linspace(-6, 6, 2401)
    b0, p0 = branch(kerr=0.0, delta=-1.0, r=0.9)
    sym = asymmetry_about_peak(w, s_nn(linearize(b0, p0), w), 2.0)
    b1, p1 = branch(kerr=0.3, delta=-1.0, r=0.9)
    asym = asymmetry_about_peak(w, s_nn(linearize(b1, p1), w), 2.0)
    assert sym < 1e-9
    assert asym > 1e-3


def test_rates_symmetry_and_red_cooling():
    p = make_params(kerr=0.0, omega_m=0.4)
    (b,) = solve_steady_states(p, DriveParams(detuning=0.0, n_in=3.0))
    gs, gas = scattering_rates(linearize(b, p))
    assert gs == pytest.approx(gas, rel=1e-14)
    (b,) = solve_steady_states(p, DriveParams(detuning=-0.4, n_in=3.0))
    gs, gas = scattering_rates(linearize(b, p))
    assert gas > gs
    assert gas == pytest.approx(p.mech.g0**2 * s_nn(linearize(b, p), 0.4), rel=1e-15)


def test_spectrum_trace_lab_frame_and_symmetry():
    p = make_params(kerr=0.0)
    (b,) = solve_steady_states(p, DriveParams(detuning=-1.2, n_in=2.0))
    w = np.linspace(-8, 8, 1601) + 0.0
    res = spectrum_trace(linearize(b, p), w, lab_frame=True)
    np.testing.assert_allclose(res.omega_lab, p.cavity.omega_c - 1.2 + w)
    # K = 0: symmetric about ω = −Δ
    i = int(np.argmin(np.abs(w - 1.2)))
    assert w[int(np.argmax(res.s_nn))] == pytest.approx(1.2, abs=0.01)
    np.testing.assert_allclose(res.s_nn[i + 1:i + 200], res.s_nn[i - 1:i - 200:-1], rtol=1e-9)
    text = res.to_csv()
    assert "omega_hz,omega_lab_hz,s_nn" in text and "# branch: low" in text


@pytest.mark.filterwarnings("ignore:static optomechanical")
def test_fig1_two_branch_traces_and_quadrature():
    p = fig1_params(16e3)
    wm = hz_to_angular(300e3)
    roots = [b for b in solve_steady_states(p, DriveParams(detuning=-11 * wm, r=1.5)) if b.stable]
    assert [b.label for b in roots] == ["low", "high"]
    lins = [linearize(b, p) for b in roots]
    for lin in lins:
        assert abs(lin.lam) == pytest.approx(p.cavity.kerr * lin.n_c, rel=1e-12)
    w = np.linspace(-40, 40, 40001) * p.cavity.kappa
    for lin in lins:
        area = np.trapezoid(s_nn(lin, w), w) / (2 * math.pi)
        # ⟨δn²⟩ = n_c for a coherent state; Kerr squeezing changes it by O(K·n_c/κ)
        assert 0.2 * lin.n_c < area < 5 * lin.n_c


@pytest.mark.filterwarnings("ignore:static optomechanical")
def test_rates_sweep_discontinuity_at_spinodals():
    p = fig1_params(16e3)
    wm = hz_to_angular(300e3)
    drive = DriveParams(r=1.5, reference_kerr=hz_to_angular(16e3))
    w = bistable_window(p, drive)
    g = np.linspace(-14, -8, 601) * wm
    step = g[1] - g[0]
    up = rates_sweep(p, drive, g, "up")
    down = rates_sweep(p, drive, g[::-1], "down")
    assert len(up.jumps) == 1 and len(down.jumps) == 1
    assert abs(g[up.jumps[0]] - w.delta_hi) <= step
    assert abs(g[::-1][down.jumps[0]] - w.delta_lo) <= step
    for tr in (up, down):
        net = tr.net
        j = tr.jumps[0]
        jump = abs(net[j] - net[j - 1])
        typical = np.median(np.abs(np.diff(net)))
        assert jump > 20 * typical
    lo = rates_sweep(p, drive, g, "up", branch_policy="high")
    assert np.isnan(lo.gamma_s[0]) and np.all(np.isfinite(lo.gamma_s[-10:]))
    assert "net_heating_hz" in up.to_csv()
