"""Exception types shared across the package."""


class GibError(Exception):
    """Base class for all package errors."""


class ParseError(GibError):
    """A file could not be parsed (bad JSON line, bad CSV row, bad header)."""


class ValidationError(GibError):
    """An input violates a documented invariant (bad dims, duplicate id, ...)."""


class FitError(GibError):
    """A statistical fit could not be performed (too few samples, ...)."""


class NumericError(GibError):
    """A numeric failure occurred (non-finite loss, degenerate weights, ...)."""
