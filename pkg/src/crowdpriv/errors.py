"""Exception hierarchy.

``ValidationError`` covers malformed configurations; ``NumericalError`` and
its subclasses cover failures of the analysis itself.
"""


class CrowdPrivError(Exception):
    pass


class ValidationError(CrowdPrivError, ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(CrowdPrivError, ArithmeticError):
    pass


class NotSchurError(NumericalError):
    """Some closed-loop matrix ``A - L C_s`` has spectral radius >= 1."""

    def __init__(self, message, radii=()):
        super().__init__(message)
        self.radii = list(radii)


class NoConvergenceError(NumericalError):
    pass


class SingularArgumentError(NumericalError):
    """A log-determinant argument is (numerically) singular."""


class PoolSizeUnsupportedError(CrowdPrivError, ValueError):
    pass


class ConfigError(CrowdPrivError, ValueError):
    """Config file could not be parsed or is missing/invalid fields."""
