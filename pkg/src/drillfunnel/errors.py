"""Exception hierarchy shared by all engines."""


class DrillStringError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DrillStringError, ValueError):
    """An argument lies outside the domain on which a quantity is defined."""


class ConfigurationError(DrillStringError, ValueError):
    """Invalid or mutually inconsistent configuration."""


class DelayBufferError(DrillStringError, LookupError):
    """A delayed sample was requested outside the stored history span."""


class ConvergenceError(DrillStringError, ArithmeticError):
    """An iterative solver did not reach its tolerance."""


class FunnelViolation(DrillStringError):
    """The normalized tracking error left the open interval (-1, 1).

    Attributes
    ----------
    t : float
        Simulation time at which the violation was detected.
    e : float
        Offending value of the normalized error.
    """

    def __init__(self, t: float, e: float, message: str | None = None):
        self.t = float(t)
        self.e = float(e)
        super().__init__(message or f"funnel violated at t={self.t:.6g}: |e|={abs(self.e):.6g} >= 1")
