"""Exception types shared across the package."""


class OtcpError(Exception):
    """Base class for every error raised by this library."""


class DimensionMismatch(OtcpError):
    """Point counts or coordinate dimensions of two inputs disagree."""


class NonFiniteInput(OtcpError):
    """An input coordinate is NaN or infinite."""


class InvalidDimension(OtcpError):
    """A requested size or dimension is not a positive integer."""


class InfeasibleDuals(OtcpError):
    """Recovered dual potentials violate feasibility; signals a solver bug
    or a non-optimal assignment."""


class LevelOutOfRange(OtcpError):
    """A quantile level is outside (0, 1] or implies more ranks than exist."""


class CalibrationTooSmall(OtcpError):
    """The calibration set cannot support the requested confidence level."""


class NeighborCountTooSmall(OtcpError):
    """The neighbor count cannot support the requested confidence level."""


class InvalidLabel(OtcpError):
    """A class label is outside {1..K}."""


class InvalidProbability(OtcpError):
    """A probability vector is too far from the simplex to renormalize."""


class EmptyTestSet(OtcpError):
    """A metric was requested over zero test points."""


class TooFewTestPoints(OtcpError):
    """Not enough test points for the requested partition protocol."""


class DegenerateBox(OtcpError):
    """A Monte Carlo bounding box has a non-positive or non-finite side."""


class SingularCovariance(OtcpError):
    """A covariance matrix is singular even after regularization."""


class MalformedData(OtcpError):
    """A data or artifact file does not match its documented format."""
