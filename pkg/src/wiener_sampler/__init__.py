"""Optimal sampling of a Wiener process for remote estimation over a channel
with i.i.d. transmission failures and random delays.

The solver computes the MSE-optimal signal-aware threshold and the
age-optimal benchmark; the simulator measures both (and zero-wait) on
sample paths.
"""
from ._accel import HAVE_NUMBA, USE_NUMBA, backend_name
from .channel import (ChannelModel, Constant, DelayModel, LognormalNormalized, TwoPoint,
                      delay_from_dict)
from .errors import (BracketError, ConfigError, GridError, SolverError,
                     ThresholdBracketError)
from .sim import (AgeThreshold, SignalAwareThreshold, SimConfig, SimResult, ZeroWait,
                  epoch_statistics, run_experiment, run_replication)
from .solver import (AgeResult, SolverConfig, SolverResult, h_of_beta, reliable_closed_form,
                     solve_age_opt, solve_mse_opt)
from .stagecost import StageParams, stage_cost

__all__ = [
    "HAVE_NUMBA", "USE_NUMBA", "backend_name",
    "ChannelModel", "Constant", "DelayModel", "LognormalNormalized", "TwoPoint",
    "delay_from_dict",
    "BracketError", "ConfigError", "GridError", "SolverError", "ThresholdBracketError",
    "AgeThreshold", "SignalAwareThreshold", "SimConfig", "SimResult", "ZeroWait",
    "epoch_statistics", "run_experiment", "run_replication",
    "AgeResult", "SolverConfig", "SolverResult", "h_of_beta", "reliable_closed_form",
    "solve_age_opt", "solve_mse_opt",
    "StageParams", "stage_cost",
]
__version__ = "0.1.0"
