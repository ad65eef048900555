import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from optokerr.backaction import (EIGENVALUE, backaction_eigenvalue, backaction_quantum_noise, cavity_self_energy,
                                 cooling_trace, effective_kerr, quantum_noise_arrays, weak_coupling)
from optokerr.core import DriveParams, InstabilityError, hz_to_angular, paper_device
from optokerr.spectrum import linearize, s_nn
from optokerr.steadystate import SQRT3, solve_steady_states

from conftest import make_params

H = hz_to_angular


def sideband_oracle(kappa, delta, omega_m, gamma_m, g0, n_c, n_th):
    """Linear-cavity sideband cooling rates in textbook form (K = 0, red detuning Δ < 0)."""
    a_minus = g0**2 * n_c * kappa / (kappa**2 / 4 + (delta + omega_m) ** 2)  # anti-Stokes, cools
    a_plus = g0**2 * n_c * kappa / (kappa**2 / 4 + (delta - omega_m) ** 2)   # Stokes, heats
    gamma_eff = gamma_m + a_minus - a_plus
    return (gamma_m * n_th + a_plus) / gamma_eff, gamma_eff


@given(st.floats(min_value=-3, max_value=-0.05), st.floats(min_value=0.1, max_value=3.0),
       st.floats(min_value=0.1, max_value=100.0), st.floats(min_value=0, max_value=100))
def test_linear_cavity_matches_sideband_formula(delta, omega_m, n_in, n_th):
    p = make_params(kerr=0.0, omega_m=omega_m, g0=1e-3, gamma_m=1e-4, n_th=n_th)
    (b,) = solve_steady_states(p, DriveParams(detuning=delta, n_in=n_in))
    pt = backaction_quantum_noise(b, p)
    n_ref, g_ref = sideband_oracle(1.0, delta, omega_m, 1e-4, 1e-3, b.n_c, n_th)
    assert pt.gamma_eff == pytest.approx(g_ref, rel=1e-10)
    assert pt.n_m == pytest.approx(n_ref, rel=1e-10)


def test_far_detuned_baseline(quiet):
    p = paper_device()
    kappa = p.cavity.kappa
    grid = np.concatenate([np.linspace(-40, -20, 21), np.linspace(20, 40, 21)]) * kappa
    tr = cooling_trace(p, 0.5, grid, "up")
    np.testing.assert_allclose(tr.array("n_m"), p.mech.n_th, rtol=1e-3)


def test_zero_coupling_is_bath(quiet):
    p = make_params(g0=0.0, n_th=12.0)
    grid = np.linspace(-3, 1, 41)
    tr = cooling_trace(p, 2.0, grid, "up")
    assert np.all(tr.valid)
    np.testing.assert_array_equal(tr.array("n_m"), 12.0)
    np.testing.assert_array_equal(tr.array("gamma_eff"), p.mech.gamma_m)


@given(st.floats(min_value=-3, max_value=-0.3), st.floats(min_value=0.1, max_value=2.5), st.sampled_from([0, -1]))
def test_methods_agree_in_weak_coupling(delta, r, which):
    p = make_params(kerr=0.3, omega_m=0.8, g0=1e-4, gamma_m=1e-4, n_th=5.0)
    b = solve_steady_states(p, DriveParams(detuning=delta, r=r, reference_kerr=0.3))[which]
    assume(b.stable and weak_coupling(b, p))
    qn = backaction_quantum_noise(b, p)
    ev = backaction_eigenvalue(b, p)
    assert ev.method == EIGENVALUE
    assert ev.gamma_eff == pytest.approx(qn.gamma_eff, rel=1e-3, abs=1e-9)
    assert ev.n_m == pytest.approx(qn.n_m, rel=1e-3)
    assert ev.delta_omega_m == pytest.approx(qn.delta_omega_m, rel=1e-3, abs=1e-10)


def test_self_energy_real_part_is_half_gamma_opt():
    p = make_params(kerr=0.3, omega_m=0.8, g0=1e-3)
    (b, *_) = solve_steady_states(p, DriveParams(detuning=-1.0, r=0.6, reference_kerr=0.3))
    pt = backaction_quantum_noise(b, p)
    pi = cavity_self_energy(b, p, p.mech.omega_m)
    assert 2 * pi.real == pytest.approx(pt.gamma_opt, rel=1e-10)


def test_effective_kerr_paper_device():
    p = paper_device()
    extra = effective_kerr(p) - p.cavity.kerr
    assert extra / (2 * math.pi) == pytest.approx(0.0682, rel=2e-3)
    assert extra < 1e-5 * p.cavity.kerr


def test_blue_detuning_instability_raises(quiet):
    p = make_params(kerr=0.0, omega_m=1.0, g0=1e-2, gamma_m=1e-6)
    (b,) = solve_steady_states(p, DriveParams(detuning=1.0, n_in=100.0))
    with pytest.raises(InstabilityError):
        backaction_quantum_noise(b, p)
    with pytest.raises(InstabilityError):
        backaction_eigenvalue(b, p)
    tr = cooling_trace(p, DriveParams(n_in=100.0), [1.0], "up")
    assert not tr.points[0].valid and tr.points[0].reason.startswith("instability")
    assert np.isnan(tr.array("n_m")[0])


def test_invalid_points_flagged_not_nan_in_valid(quiet):
    p = paper_device()
    grid = np.linspace(-3, 1, 201) * p.cavity.kappa
    tr = cooling_trace(p, 3.0, grid, branch_policy="high")
    v = tr.valid
    assert (~v).any() and v.any()
    assert np.all(np.isfinite(tr.array("n_m")[v]))
    assert all(pt.reason in ("branch-absent", "branch-unstable") or pt.reason.startswith("instability")
               for pt in tr.points if not pt.valid)
    text = tr.to_csv()
    assert text.splitlines()[0].startswith("#") and "n_m" in text


def test_below_threshold_single_trace(quiet):
    p = paper_device()
    grid = np.linspace(-3, 1, 201) * p.cavity.kappa
    up = cooling_trace(p, 0.5, grid, "up")
    down = cooling_trace(p, 0.5, grid[::-1], "down")
    assert not up.jumps and not down.jumps
    np.testing.assert_allclose(up.array("n_m"), down.array("n_m")[::-1], rtol=1e-12)


def test_vectorized_arrays_match_pointwise(quiet):
    p = paper_device()
    K, kappa = p.cavity.kerr, p.cavity.kappa
    r = 1.5
    F = r * kappa**3 / (3 * SQRT3 * K)
    grid = np.linspace(-2.5, 0.5, 301) * kappa
    for direction in ("up", "down"):
        g = grid if direction == "up" else grid[::-1]
        tr = cooling_trace(p, r, g, direction)
        n_c, n_m, ge = quantum_noise_arrays(p, F, g, direction)
        np.testing.assert_allclose(n_c, tr.array("n_c"), rtol=1e-9)
        np.testing.assert_allclose(n_m, tr.array("n_m"), rtol=1e-8)
        np.testing.assert_allclose(ge, tr.array("gamma_eff"), rtol=1e-8)


@given(st.floats(min_value=-4, max_value=4), st.floats(min_value=0.1, max_value=3.0))
def test_optical_spring_matches_textbook(delta, omega_m):
    p = make_params(kerr=0.0, omega_m=omega_m, g0=1e-3, gamma_m=1e-4)
    (b,) = solve_steady_states(p, DriveParams(detuning=delta, n_in=10.0))
    pt = backaction_quantum_noise(b, p)
    ref = 1e-6 * b.n_c * sum((delta + s) / (0.25 + (delta + s) ** 2) for s in (omega_m, -omega_m))
    assert pt.delta_omega_m == pytest.approx(ref, rel=1e-9, abs=1e-18)


def test_lowest_occupation_on_low_branch(quiet):
    p = paper_device()
    kappa = p.cavity.kappa
    grid = np.linspace(-3, 0.5, 701) * kappa
    lo = cooling_trace(p, 1.5, grid, branch_policy="low").array("n_m")
    hi = cooling_trace(p, 1.5, grid, branch_policy="high").array("n_m")
    assert np.nanmin(lo) < np.nanmin(hi)
    assert np.nanmin(lo) < p.mech.n_th


def test_spring_changes_sign_at_cooling_window_edge(quiet):
    # unresolved sidebands: damping and spring both change sign at the effective resonance
    p = paper_device()
    grid = np.linspace(-3, 0.5, 351) * p.cavity.kappa
    tr = cooling_trace(p, 0.54, grid, "up")
    spring, n_m = tr.array("delta_omega_m"), tr.array("n_m")
    flips = np.nonzero(np.diff(np.sign(spring)) != 0)[0]
    assert flips.size == 1
    cooled = np.nonzero(n_m < p.mech.n_th)[0]
    assert np.all(spring[cooled] < 0)
    assert abs(flips[0] - cooled[-1]) <= 1
    assert np.all(spring[flips[0] + 1:] > 0)
