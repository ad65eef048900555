"""Linearized number spectrum against the full Lindblad steady state.

Dimensionless monostable point: kappa = 1, K = 0.3, Delta = -0.5, classical
n_c = 2, then n_c = 8 at the same K*n_c. The linearized theory is an expansion
in 1/n_c, so the mismatch shrinks as n_c grows.

Run: python3 demos/04_oracle_check.py
"""
import numpy as np

from optokerr import FockProblem, compare_linearized, convergence_sweep

w = np.linspace(-3, 3, 61)
for n_c in (2.0, 8.0):
    kerr = 0.3 * 2.0 / n_c
    cmp_ = compare_linearized(n_c, -0.5, kerr, w, jobs=4)
    print(f"n_c = {n_c:.0f}, K = {kerr:.3f}: cutoff {cmp_.cutoff}, <n> = {cmp_.mean_n:.4f}, "
          f"max rel dev {cmp_.max_rel_error:.1%}, mean rel dev {cmp_.mean_rel_error:.1%}")

print()
print(convergence_sweep(FockProblem.from_classical(2.0, -0.5, 0.3)).to_text())
