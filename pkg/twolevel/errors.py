class TwoLevelError(Exception):
    """Base class for errors raised by the twolevel package."""


class ConfigError(TwoLevelError, ValueError):
    """Run configuration is malformed or inconsistent."""


class EnvelopeError(TwoLevelError, ValueError):
    """Envelope samples are unusable (non-finite, identically zero, ...)."""


class FitnessError(TwoLevelError, ValueError):
    """Fitness functional cannot be evaluated on the given trajectory."""


class IntegrationError(TwoLevelError):
    """Propagation produced a non-finite state."""

    def __init__(self, time: float, message: str = "non-finite state"):
        self.time = time
        super().__init__(f"{message} at t={time:.6g}")


class ShootingError(TwoLevelError):
    """Shooting bracket does not enclose a solution."""


class GridResolutionError(TwoLevelError):
    """Discretization is too coarse for the requested accuracy."""


class BoundStateError(TwoLevelError, ValueError):
    """More bound states requested than the potential supports."""
