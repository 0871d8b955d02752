"""Exception hierarchy shared by all modules."""


class FPUError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FPUError, ValueError):
    """Invalid configuration value or file."""


class RegimeError(FPUError, ValueError):
    """A parameter lies outside the regime the numerics are built for."""


class PotentialOverflowError(FPUError, OverflowError):
    """Potential evaluated at a strain where it overflows double precision."""


class DivergenceError(FPUError):
    """A tail sum does not converge on the available window."""


class WindowError(FPUError):
    """The lattice window is too small for the requested computation."""

    def __init__(self, message, required_width=None):
        super().__init__(message)
        self.required_width = required_width


class BlowUpError(FPUError):
    """The time stepper produced non-finite or absurdly large values.

    ``last_state`` is the last state that passed the finiteness check and
    ``time`` the time it belongs to.
    """

    def __init__(self, message, last_state=None, time=None):
        super().__init__(message)
        self.last_state = last_state
        self.time = time


class ConvergenceError(FPUError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history) if history is not None else []
