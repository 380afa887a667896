"""Exception types shared across the package.

Each class corresponds to one failure mode of the numerical contracts;
callers can catch ``AggsimError`` to handle all of them uniformly.
"""


class AggsimError(Exception):
    """Base class for all package-specific failures."""


class NumericOverflowError(AggsimError):
    """A pairwise distance or force evaluation produced inf/nan."""


class ZeroMassError(AggsimError):
    """An operation requiring positive total mass got none."""


class CoincidentPointsError(AggsimError):
    """Two points expected to be distinct coincide."""


class FocalAtOriginError(AggsimError):
    """A half-space split needs a direction but the focal point is 0."""


class NotCenteredError(AggsimError):
    """A zero-center-of-mass precondition does not hold."""


class PreconditionRadiusError(AggsimError):
    """The focal particle is not far enough out for the check to apply."""


class DivergedError(AggsimError):
    """A run blew past the hard radius cap."""


class RejectionExhaustedError(AggsimError):
    """Rejection sampling of initial data failed too many times in a row."""


class DegenerateError(AggsimError):
    """A regression was requested on degenerate input (all abscissae equal)."""
