"""Exception hierarchy shared by all wearbed modules."""


class WearbedError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(WearbedError, ValueError):
    """An argument is outside its documented domain."""


class InsufficientGeometryError(WearbedError):
    """Fewer than three usable ranges for a 2D fix."""


class DegenerateGeometryError(WearbedError):
    """Anchors are (numerically) collinear."""


class SchedulingError(WearbedError):
    """An event was scheduled in the past."""


class NoBackendError(WearbedError):
    """The balancer has no online backend to hand out."""


class ClockViolationError(WearbedError):
    """A record claims to be received before it was sent."""


class ExportError(WearbedError, OSError):
    """Writing an output artifact failed."""


class ValidationError(WearbedError):
    """A scenario configuration violates one or more invariants.

    ``violations`` holds every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(msg)
