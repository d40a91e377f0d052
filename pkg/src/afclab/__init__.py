"""Simulation and analysis toolkit for atomic-frequency-comb quantum memories."""

from .echo import AFCWindow, afc_efficiency_analytic, propagate, simulate_echo, storage_time, transfer_function
from .errors import AFCError, ConfigError, ConvergenceError
from .medium import Grid, IonParameters, SpectralProfile, build_inhomogeneous_profile
from .pumping import PumpPulse, PumpSequence, comb_sequence, run_sequence

__version__ = "0.1.0"
