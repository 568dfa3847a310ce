"""Exception types shared across the toolkit."""


class PatchMixError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PatchMixError, ValueError):
    """A domain object violates one of its invariants."""


class ParameterError(PatchMixError, ValueError):
    """An operation was called with inconsistent or out-of-range arguments."""


class FormatError(PatchMixError, ValueError):
    """A file does not parse under its declared format.

    Messages name the offending byte or line offset where one exists.
    """


class CacheError(PatchMixError):
    """A score cache is malformed or internally inconsistent."""


class ScoreError(PatchMixError):
    """Significance scoring hit a degenerate input (e.g. all value norms zero)."""


class NumericError(PatchMixError, ArithmeticError):
    """A computation produced a non-finite intermediate value."""


class MixError(PatchMixError):
    """Mixing produced a degenerate result (e.g. zero total target mass)."""
