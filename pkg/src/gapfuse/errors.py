"""Exception hierarchy shared by every gapfuse module."""


class GapfuseError(Exception):
    """Base class for all errors raised by gapfuse."""


class ConfigurationError(GapfuseError, ValueError):
    """Shapes, dimensions or settings that do not fit together."""


class InputError(GapfuseError, ValueError):
    """Data values outside the domain an operation accepts."""


class ParseError(GapfuseError, ValueError):
    """A file could not be read into the expected structure."""


class UsageError(GapfuseError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""
