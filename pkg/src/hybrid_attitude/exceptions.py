"""Exception types raised across the package."""


class HybridAttitudeError(Exception):
    """Base class for all package errors."""


class NotAntiSymmetric(HybridAttitudeError, ValueError):
    """Matrix handed to ``vec`` is not anti-symmetric within tolerance."""


class AxisNotUnit(HybridAttitudeError, ValueError):
    """Rotation axis is not a unit vector."""


class InvalidBounds(HybridAttitudeError, ValueError):
    """Sampling bounds violate ``0 < T_m <= T_M``."""


class ScheduleOutOfRange(HybridAttitudeError, ValueError):
    """A measurement time falls outside the truth trajectory."""


class TimerNotExpired(HybridAttitudeError, RuntimeError):
    """A jump was requested while the virtual timer is still positive."""


class KvOutOfRange(HybridAttitudeError, ValueError):
    """Velocity gain outside the open interval (0, 1)."""


class Infeasible(HybridAttitudeError):
    """No Lyapunov certificate could be found for the gain set."""


class CertificateMismatch(HybridAttitudeError, ValueError):
    """Certificate dimensions or gains do not match the blocks in use."""


class EmptyTrace(HybridAttitudeError, ValueError):
    """A trace without samples was passed to an analysis routine."""


class ConfigError(HybridAttitudeError, ValueError):
    """Scenario configuration failed to parse or validate."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
