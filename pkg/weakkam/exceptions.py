"""Errors raised by the toolkit.

Every error derives from :class:`WeakKamError` so that the stage runner can
record it and keep going. Diagnostics travel as attributes.
"""


class WeakKamError(Exception):
    """Base class for all toolkit errors."""


class MaximizerOnBoundary(WeakKamError):
    """Legendre maximizer reached the fiber search box, p_bound is too small."""

    def __init__(self, message, p_star=None):
        super().__init__(message)
        self.p_star = p_star


class ConvexityViolation(WeakKamError):
    """Sampled fibers are not strictly convex or not superlinear."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GridMismatch(WeakKamError):
    """Two grid functions do not live on the same grid."""


class UnboundedBelow(WeakKamError):
    """Backward minimization runs into the velocity box boundary."""


class UnboundedAbove(WeakKamError):
    """Forward maximization runs into the velocity box boundary."""


class NotConverged(WeakKamError):
    """Stationary solve did not reach tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RegularityFailure(WeakKamError):
    """Regularized field is not C^{1,1} at grid resolution."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GradientBlowup(WeakKamError):
    """Interpolated gradient exceeded the characteristic guard."""


class EmptyAubry(WeakKamError):
    """No grid node passed the Aubry filters."""


class Escape(WeakKamError):
    """Phase trajectory left the momentum guard."""


class EmptyRegion(WeakKamError):
    """Sublevel region has no sampled point."""


class HypothesisViolation(WeakKamError):
    """Rate experiment preconditions do not hold for this preset."""


class FloorDominates(WeakKamError):
    """Rate samples reach the discretization floor too early to fit."""
