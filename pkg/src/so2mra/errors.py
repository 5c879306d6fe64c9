"""Exception types shared across the package."""


class So2MraError(Exception):
    """Base class for package-specific errors."""


class ConfigError(So2MraError, ValueError):
    """Invalid experiment configuration."""


class DegenerateDrawError(So2MraError, ValueError):
    """A random draw produced an unusable object (e.g. no positive rescaling)."""


class NotSampleableError(So2MraError, ValueError):
    """Rotation sampling requested from a density that is not nonnegative."""


class VanishingCoefficientError(So2MraError, ValueError):
    """A moment entry required for a diagonal inversion is numerically zero."""


class MomentConsistencyError(So2MraError, ValueError):
    """Moments violate a structural property the recovery algorithms rely on."""
