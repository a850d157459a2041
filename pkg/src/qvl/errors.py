"""Exception hierarchy shared by every qvl module."""


class QVLError(Exception):
    """Base class for all errors raised by qvl."""


class ShapeError(QVLError, ValueError):
    """Mismatched multiplicity, ambient dimension or grid resolution."""


class DomainError(QVLError, ValueError):
    """A point, ball or node lies outside where the operation is defined."""


class ParameterError(QVLError, ValueError):
    """A numeric parameter violates its documented range."""


class ConstructionError(QVLError, RuntimeError):
    """A construction failed to meet its postconditions."""


class SplitError(QVLError, ValueError):
    """A Q-point is not close enough to a separated point to be split."""


class UnsupportedDimensionError(QVLError, ValueError):
    """The requested construction is not available in this dimension."""


class ConvergenceError(QVLError, RuntimeError):
    """The Dirichlet solver ran out of sweeps.

    The last iterate and the energy history are kept on the exception so
    callers can inspect or resume.
    """

    def __init__(self, message, field=None, energies=None):
        super().__init__(message)
        self.field = field
        self.energies = list(energies or [])


class UsageError(QVLError, ValueError):
    """Malformed scenario or command-line input."""
