"""Exception hierarchy shared by all mtscore modules."""


class MTScoreError(Exception):
    """Base class for errors raised by mtscore."""


class AllWeightsZero(MTScoreError):
    """Every sample received zero MT weight; the width is too small for the data scale."""


class DegenerateRegion(MTScoreError):
    """The Fresnel validity interval is empty for the given array geometry."""


class NotPositiveDefinite(MTScoreError):
    """A matrix that must be positive definite failed its Cholesky factorization."""


class SingularGHat(MTScoreError):
    """The empirical score covariance is numerically singular."""


class SingularFHat(MTScoreError):
    """The empirical curvature matrix is numerically singular."""


class NoAdmissibleWidth(MTScoreError):
    """Every candidate width in the selection grid produced a singular matrix."""
