"""Photon-number spectra and scattering rates for three Kerr values.

System: kappa/2pi = 3 MHz, omega_m/2pi = 300 kHz, g0/2pi = 1.7 kHz, drive at
Delta = -11 omega_m with r = 1.5 relative to the largest Kerr value.

Run: python3 demos/02_number_spectrum.py
"""
import warnings

import numpy as np

from optokerr import CavityParams, DriveParams, MechParams, SystemParams, hz_to_angular, validate
from optokerr.spectrum import asymmetry_about_peak, linearize, rates_sweep, s_nn, scattering_rates
from optokerr.steadystate import solve_steady_states

warnings.simplefilter("ignore")  # the static optomechanical shift warning is expected at these couplings
h = hz_to_angular
wm = h(300e3)


def system(kerr_hz):
    return validate(SystemParams(CavityParams(omega_c=h(8e9), kappa_c=h(1.5e6), kappa_i=h(1.5e6), kerr=h(kerr_hz)),
                                 MechParams(omega_m=wm, gamma_m=h(10.0), g0=h(1.7e3))))


drive = DriveParams(detuning=-11 * wm, r=1.5, reference_kerr=h(16e3))
omega = np.linspace(-40, 40, 4001) * wm
for k in (0.0, 8e3, 16e3):
    p = system(k)
    for b in solve_steady_states(p, drive):
        if not b.stable:
            continue
        lin = linearize(b, p)
        gs, gas = scattering_rates(lin)
        asym = asymmetry_about_peak(omega, s_nn(lin, omega), 5 * wm)
        print(f"K/2pi = {k / 1e3:4.0f} kHz, {b.label:>4} branch: n_c = {b.n_c:9.1f}, "
              f"Gamma_S/2pi = {gs / 2 / np.pi:8.2f} Hz, Gamma_AS/2pi = {gas / 2 / np.pi:8.2f} Hz, "
              f"asymmetry {asym:.3f}")

# net heating along a sweep; the largest Kerr value jumps between branches at the spinodals
grid = np.linspace(-14, -8, 121) * wm
for k in (0.0, 16e3):
    tr = rates_sweep(system(k), drive, grid, "up")
    print(f"K/2pi = {k / 1e3:.0f} kHz up-sweep: {len(tr.jumps)} jump(s)"
          + "".join(f" at Delta/omega_m = {tr.detunings[j] / wm:.3f}" for j in tr.jumps))
