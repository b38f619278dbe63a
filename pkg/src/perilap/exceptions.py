"""Exception types shared across the package."""


class SingularityError(ValueError):
    """Evaluation point coincides with (or is within guard of) a kernel singularity."""


class ProximityError(ValueError):
    """Evaluation point is too close to a boundary for the requested accuracy."""


class ExtrapolationError(RuntimeError):
    """Offset extrapolation did not converge; usually signals under-resolution."""


class ConfigError(ValueError):
    """A run configuration file is malformed or inconsistent."""
