"""Parameter extraction from measured or synthetic traces."""
from .circle import (CircleFitParams, circle_fit_kerr, circle_fit_linear, circle_fit_residuals, s21_kerr,
                     s21_notch, synthetic_s21)
from .cooling import CoolingFit, compare_traces, cooling_model, cooling_trace_fit, extrapolate
from .mechanics import (G0Calibration, SidebandFit, calibrate_g0, infer_t_eff, lorentzian_psd,
                        mech_sideband_fit, synthetic_psd, synthetic_ramp)
from .relaxation import RelaxationFit, relaxation_fit, synthetic_relaxation
from .traces import FitReport, PsdTrace, S21Trace, relaxation_from_csv, relaxation_to_csv
