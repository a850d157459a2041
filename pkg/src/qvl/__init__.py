"""Numerical laboratory for Q-valued maps: the optimal-assignment metric space,
discrete Dirichlet energies, competitor constructions and stationarity checks."""

from .errors import (
    ConstructionError,
    ConvergenceError,
    DomainError,
    ParameterError,
    QVLError,
    ShapeError,
    SplitError,
    UnsupportedDimensionError,
    UsageError,
)
from .qspace import QPoint, metric

__version__ = "0.1.0"
