"""Moving-domain barotropic compressible Navier-Stokes in Lagrangian coordinates."""

__version__ = "0.1.0"

from .errors import (
    BlowUpError,
    ConfigError,
    DensityOutOfRangeError,
    FlowDegenerateError,
    GridTooCoarseError,
    InconsistentTrajectoryError,
    LagcnsError,
    NonContractionError,
    SmallnessExitError,
    SolverDivergenceError,
    TrackingError,
)
from .fields import Field, Grid, TimeGrid, Trajectory

__all__ = [
    "BlowUpError",
    "ConfigError",
    "DensityOutOfRangeError",
    "Field",
    "FlowDegenerateError",
    "Grid",
    "GridTooCoarseError",
    "InconsistentTrajectoryError",
    "LagcnsError",
    "NonContractionError",
    "SmallnessExitError",
    "SolverDivergenceError",
    "TimeGrid",
    "TrackingError",
    "Trajectory",
]
