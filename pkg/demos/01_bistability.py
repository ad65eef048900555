"""Kerr bistability of the measured device: critical drive, window width, hysteresis.

Run: python3 demos/01_bistability.py
"""
import numpy as np

from optokerr import DriveParams, bistable_window, critical_input, hysteresis_sweep, paper_device

params = paper_device(kerr_hz=14e3)
kappa = params.cavity.kappa
two_pi = 2 * np.pi

print(f"kappa/2pi = {kappa / two_pi / 1e6:.2f} MHz, K/2pi = {params.cavity.kerr / two_pi / 1e3:.0f} kHz")
print(f"critical input flux n_bi = {critical_input(params):.4g} photons/s")

for r in (0.54, 1.0, 1.9, 3.0):
    w = bistable_window(params, DriveParams(r=r))
    if w.exists:
        print(f"r = {r:4.2f}: window {w.delta_lo / two_pi / 1e6:+.3f} .. {w.delta_hi / two_pi / 1e6:+.3f} MHz, "
              f"width {w.width / two_pi / 1e6:.3f} MHz")
    else:
        print(f"r = {r:4.2f}: single branch")

# hysteresis: the up-sweep stays on the low branch until its spinodal, the down-sweep on the high one
grid = np.linspace(-3, 0.5, 351) * kappa
up = hysteresis_sweep(params, DriveParams(r=3.0), grid, "up")
down = hysteresis_sweep(params, DriveParams(r=3.0), grid[::-1], "down")
for name, s in (("up", up), ("down", down)):
    j = s.jumps[0]
    print(f"{name:>4}-sweep jumps at {s.detunings[j] / two_pi / 1e6:+.3f} MHz: "
          f"n_c {s.branches[j - 1].n_c:.0f} -> {s.branches[j].n_c:.0f} ({s.branches[j - 1].label} -> {s.branches[j].label})")
