"""Exception and warning types raised across the package."""


class LyapMetricError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LyapMetricError, ValueError):
    """Operands have incompatible shapes or grids."""


class SingularMatrix(LyapMetricError, ArithmeticError):
    """A matrix that must be invertible has a vanishing singular value."""


class NotPositiveDefinite(LyapMetricError, ValueError):
    """A matrix that must be symmetric positive-definite is not."""


class NoConvergence(LyapMetricError, RuntimeError):
    """An iterative procedure hit its iteration cap."""


class VolumeNotPreserved(LyapMetricError, ValueError):
    """A Jacobian determinant differs from +-1 beyond tolerance."""


class TangencyViolated(LyapMetricError, ValueError):
    """A field fails the tangency condition tr(G^-1 h) = 0."""


class SpectralGapViolated(LyapMetricError, ValueError):
    """Singular values alpha_k and alpha_{k+1} are too close to trust the gradient."""


class NotInMetricSpace(LyapMetricError, ValueError):
    """A metric field fails the det-1 or SPD invariant."""


class OverflowWarning(RuntimeWarning):
    """A Jacobian product grew past the safe range; use the QR oracle instead."""


class LineSearchStall(RuntimeWarning):
    """The Armijo search found no admissible step above the minimum step size."""
