"""
Custom Exception Classes

This module defines the exception hierarchy of the simulator. Every error
raised on purpose derives from ScoopingError so the CLI layer can turn it into
a clean non-zero exit without a traceback.
"""


class ScoopingError(Exception):
    """Base exception class for the application."""

    def __init__(self, message: str, details: list = None):
        super().__init__(message)
        self.details = details or []


class ConfigurationError(ScoopingError):
    """Raised when a configuration file or value is invalid."""
    pass


class InvalidTerrainSpecError(ScoopingError):
    """Raised when a terrain spec violates its invariants (mound outside bin, empty region, ...)."""
    pass


class UnknownMaterialError(ScoopingError):
    """Raised when a material id is not in the material table."""
    pass


class InfeasibleActionError(ScoopingError):
    """Raised when an infeasible scoop action is executed."""
    pass


class RasterFormatError(ScoopingError):
    """Raised when a raster file cannot be read or written."""
    pass


class NoValidCellsError(ScoopingError):
    """Raised when hole filling is asked to work on a raster without a single valid cell."""
    pass


class PatchOutOfBoundsError(ScoopingError):
    """Raised when a rotated patch window leaves the raster."""
    pass


class DimensionMismatchError(ScoopingError):
    """Raised when an input does not match the model architecture."""
    pass


class NonFiniteInputError(ScoopingError):
    """Raised when NaN or infinite values reach the surrogate."""
    pass


class FactorizationError(ScoopingError):
    """Raised when a Gram matrix stays indefinite after the maximum jitter."""
    pass


class CheckpointError(ScoopingError):
    """Raised when a model checkpoint is truncated, corrupted or of another version."""
    pass


class DatasetError(ScoopingError):
    """Raised when a training dataset cannot be read or written."""
    pass


class NoFeasibleActionsError(ScoopingError):
    """Raised when a training terrain offers no feasible scoop action."""
    pass


class InvalidFoldPlanError(ScoopingError):
    """Raised when a fold split is impossible or degenerate."""
    pass


class TrainingDivergenceError(ScoopingError):
    """Raised when a training loss becomes non-finite."""
    pass


class EmptyCandidateSetError(ScoopingError):
    """Raised when candidate generation or selection has nothing to work with."""
    pass


class PlanningFailureError(ScoopingError):
    """Raised when every ranked candidate fails planning."""
    pass


class ResultsError(ScoopingError):
    """Raised when episode results or summaries cannot be read or written."""
    pass
