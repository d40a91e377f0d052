"""Exception types shared across the package.

Every precondition failure raises a subclass of :class:`AFCError` (itself a
``ValueError``) so callers can catch one family. The CLI maps
:class:`ConfigError` to exit code 2, :class:`ConvergenceError` to 4 and any
other :class:`AFCError` to 3.
"""


class AFCError(ValueError):
    """Base class for precondition and domain violations."""


class InvalidGridError(AFCError):
    pass


class KindMismatchError(AFCError):
    pass


class CoverageError(AFCError):
    pass


class StepSizeError(AFCError):
    pass


class UndefinedDepthError(AFCError):
    pass


class DomainError(AFCError):
    pass


class ResolutionError(AFCError):
    pass


class AliasingError(AFCError):
    pass


class MatchingError(AFCError):
    pass


class GatingError(AFCError):
    pass


class SaturationError(AFCError):
    pass


class ConfigError(AFCError):
    """Malformed or inconsistent experiment configuration."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class ConvergenceError(AFCError):
    """An iterative solver stopped without converging.

    ``best`` carries the best iterate reached, so callers can still inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
