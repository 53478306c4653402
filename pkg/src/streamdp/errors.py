"""Exception types shared across the package."""


class StreamDPError(Exception):
    """Base class for all streamdp errors."""


class InvalidParameterError(StreamDPError, ValueError):
    """A parameter violates a precondition (non-positive scale, empty set, ...)."""


class DegenerateParameterError(InvalidParameterError):
    """A derived quantity is degenerate (e.g. a correction factor's denominator <= 0)."""


class DataError(StreamDPError, ValueError):
    """Input data violates its contract (out of range, malformed, misaligned)."""


class QueryError(StreamDPError, ValueError):
    """A range query is invalid (exceeds the configured range limit, bad indices)."""
