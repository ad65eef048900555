"""Driven Kerr-nonlinear cavity coupled to a mechanical resonator.

Steady states and bistability, photon-number spectra, branch-resolved
backaction, a Lindblad cross-check, and resonator fitting tools.
"""
__version__ = "0.1.0"

from .core import (CavityParams, ConvergenceError, DriveParams, InstabilityError, MechParams,
                   OptoKerrError, SystemParams, ValidatedParams, ValidationError, angular_to_hz,
                   hz_to_angular, paper_device, thermal_occupation, validate)
from .steadystate import (BistableWindow, SteadyStateBranch, SweepResult, bistable_window,
                          critical_input, hysteresis_sweep, solve_steady_states)
from .spectrum import (LinearizedCavity, SpectrumResult, linearize, s_nn, s_nn_matrix,
                       scattering_rates, spectrum_trace)
from .backaction import (BackactionPoint, CoolingTrace, backaction_eigenvalue, backaction_quantum_noise,
                         cooling_trace, effective_kerr)
from .oracle import FockProblem, compare_linearized, convergence_sweep, oracle_s_nn, steady_density
