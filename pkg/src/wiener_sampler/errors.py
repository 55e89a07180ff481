class SolverError(RuntimeError):
    """Base class for numerical failures in the value-iteration solver."""


class ThresholdBracketError(SolverError):
    """The root function has no sign change on (0, sqrt(3*beta)]."""


class GridError(SolverError):
    """Grid too small for the threshold, or non-finite tabulated values."""


class BracketError(SolverError):
    """Outer bisection could not establish h(k1) >= 0 > h(k2)."""


class ConfigError(ValueError):
    """Invalid model, solver or simulation configuration."""
