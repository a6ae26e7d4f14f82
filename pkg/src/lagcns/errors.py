"""Exception classes. Each failure class carries the CLI exit code it maps to."""


class LagcnsError(Exception):
    exit_code = 1


class ConfigError(LagcnsError):
    """Invalid configuration. ``violations`` lists every problem found, not just the first."""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class GridTooCoarseError(LagcnsError, ValueError):
    exit_code = 2


class InconsistentTrajectoryError(LagcnsError, ValueError):
    exit_code = 2


class DensityOutOfRangeError(LagcnsError, ValueError):
    exit_code = 2


class FlowDegenerateError(LagcnsError):
    exit_code = 3


class TrackingError(LagcnsError):
    """A tracked point left the configured bounding box."""

    exit_code = 3


class SolverDivergenceError(LagcnsError):
    exit_code = 4


class BlowUpError(SolverDivergenceError):
    pass


class NonContractionError(SolverDivergenceError):
    def __init__(self, message, distances=()):
        super().__init__(message)
        self.distances = list(distances)


class SmallnessExitError(LagcnsError):
    """Raised by the global driver when the small-data regime is left."""

    exit_code = 5

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
