"""Branch-resolved backaction cooling of the measured device at three drive strengths.

Run: python3 demos/03_cooling_traces.py [outdir]
"""
import sys
import warnings
from pathlib import Path

import numpy as np

from optokerr import cooling_trace, paper_device

warnings.simplefilter("ignore")
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

params = paper_device(kerr_hz=14e3, T_eff=0.267)
kappa = params.cavity.kappa
grid = np.linspace(-3, 0.5, 351) * kappa
print(f"n_th = {params.mech.n_th:.4g}")
for r in (0.54, 1.9, 3.0):
    for direction, g in (("up", grid), ("down", grid[::-1])):
        tr = cooling_trace(params, r, g, direction)
        n_m = tr.array("n_m")
        i = int(np.nanargmin(n_m))
        branch = tr.points[i].branch
        print(f"r = {r:4.2f} {direction:>4}: min n_m = {n_m[i]:8.1f} ({n_m[i] / params.mech.n_th:.2f} n_th) "
              f"at {tr.detunings[i] / kappa:+.3f} kappa on the {branch} branch, {len(tr.jumps)} jump(s)")
        tr.to_csv(out / f"cooling_r{r:g}_{direction}.csv")
print(f"traces written to {out}/")
