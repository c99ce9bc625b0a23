"""Shared exception hierarchy."""


class SonarprepError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(SonarprepError):
    """Operands have incompatible shapes."""
