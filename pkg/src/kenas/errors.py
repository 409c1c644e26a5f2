"""Shared exception types."""


class KenasError(Exception):
    """Base class for all domain errors raised by this package."""


class GraphError(KenasError):
    """Raised for malformed or unshapable computation graphs."""
