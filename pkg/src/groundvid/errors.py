"""Exception hierarchy shared across the package."""


class GroundVidError(Exception):
    """Base class for all package errors."""


class DimensionError(GroundVidError, ValueError):
    pass


class NumericError(GroundVidError, ValueError):
    pass


class CapacityError(GroundVidError, ValueError):
    pass


class InputError(GroundVidError, ValueError):
    pass


class ConsistencyError(GroundVidError, ValueError):
    pass


class InitError(GroundVidError, ValueError):
    pass


class SpecError(GroundVidError, ValueError):
    pass


class ConfigError(GroundVidError, ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ProviderError(GroundVidError, RuntimeError):
    """An embedding provider failed (distinct from an absent instance)."""
