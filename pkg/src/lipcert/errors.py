"""Exception types shared across the toolkit.

Plain ``ValueError`` is raised for bad argument values (invalid ranges,
non-finite entries, all-zero weight matrices); ``OSError`` is left to
propagate for file-system failures.
"""


class LipcertError(Exception):
    """Base class for all toolkit-specific errors."""


class ParseError(LipcertError):
    """A network or certificate file is syntactically malformed."""


class ShapeError(LipcertError):
    """Dimension mismatch between layers, or between a network and a certificate."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class NonFiniteError(ValueError, LipcertError):
    """NaN or Inf encountered where finite data is required."""


class NotPositiveDefiniteError(LipcertError):
    """A matrix required to be positive definite is not."""


class NotPsdError(LipcertError):
    """A matrix required to be positive semidefinite is not, beyond tolerance."""


class ConvergenceError(LipcertError):
    """An iterative kernel exceeded its iteration cap."""


class NumericError(LipcertError):
    """A numerical procedure failed mid-course (e.g. factorization breakdown)."""


class SizeError(LipcertError):
    """Problem dimension exceeds the configured dense cap."""


class DegenerateLayerError(LipcertError):
    """A layer quadratic form collapsed to zero (requires a zero weight matrix)."""


class SolverError(LipcertError):
    """The per-layer optimizer failed; carries the failing layer index."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class VerificationError(LipcertError):
    """A certificate failed replay against its validity conditions."""


class EstimateTimeout(LipcertError):
    """Cooperative deadline expired between estimation stages."""
