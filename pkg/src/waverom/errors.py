"""Exception types shared across the waverom package.

Two broad families matter for the command line front end: setup problems
(bad shapes, misaligned grids, sensors outside the domain) map to exit
code 2, while failures of the numerics themselves (indefinite mass
matrix, Krylov stagnation, singular normal equations) map to exit code 3.
"""


class WaveRomError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WaveRomError):
    """Problem with inputs or configuration; the computation never ran."""


class NumericalError(WaveRomError):
    """The computation ran but failed numerically."""


class ShapeMismatch(ConfigurationError):
    """Array dimensions disagree with the grid or block layout."""


class NotSymmetric(NumericalError):
    """Matrix expected symmetric within tolerance is not."""


class NotPositiveDefinite(NumericalError):
    """Cholesky or eigenvalue test found a non-positive pivot.

    Attributes
    ----------
    pivot : int or None
        Index of the offending pivot (scalar row index), when known.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class Breakdown(NumericalError):
    """Block Arnoldi encountered a numerically singular normalization.

    Attributes
    ----------
    step : int
        Iteration index at which the breakdown occurred.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class RankTooLarge(NumericalError):
    """Requested spectral truncation rank keeps non-positive eigenvalues."""


class ConvergenceFailure(NumericalError):
    """Iterative evaluation hit its dimension or iteration cap."""


class InvalidShift(ConfigurationError):
    """Snapshot time shift is smaller than the pulse half-support."""


class SensorOutsideDomain(ConfigurationError):
    """A sensor position lies outside (or on the boundary of) the domain."""


class ReferenceMismatch(ConfigurationError):
    """Medium deviates from the reference constants at a sensor location."""


class Misalignment(ConfigurationError):
    """Sampling interval is not commensurate with the fine time grid."""


class InsufficientSnapshots(ConfigurationError):
    """SnapshotSet lacks the extra time level needed by the stiffness."""


class InsufficientData(ConfigurationError):
    """DataMatrices does not hold enough matrices for the assembly."""


class NonPositiveMedium(ConfigurationError):
    """Realized wave speed or density is not strictly positive."""


class SingularNormalEquations(NumericalError):
    """Damped Gauss-Newton system is numerically singular after retry."""


class FormatError(ConfigurationError):
    """File is not in the expected serialization format."""


class NonPositiveField(ConfigurationError):
    """Imported field contains non-positive wave speed or density."""
