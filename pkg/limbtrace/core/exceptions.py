from typing import Any, List, Optional


class Error(Exception):
    """Base exception for limbtrace errors"""
    pass


class ValidationError(Error):
    """Raised when inputs violate a precondition (CLI exit code 2)"""
    pass


class InvalidCanvas(ValidationError):
    """Raised when a canvas is too small for the requested tree structure"""
    pass


class EmptyReference(ValidationError):
    """Raised when an occlusion ratio is requested against an empty whole-branch mask"""
    pass


class NonScannableGeometry(ValidationError):
    """Raised when a polyline is not strictly monotone along its scan axis"""
    pass


class InvalidCrop(ValidationError):
    """Raised when a crop window does not fit inside the canvas"""
    pass


class TooFewSamples(ValidationError):
    """Raised when there are fewer samples than cross-validation groups"""
    pass


class SpecMismatch(ValidationError):
    """Raised when a network spec is internally inconsistent"""
    pass


class ShapeError(ValidationError):
    """Raised when an input tensor does not match the network spec"""
    pass


class EmptyLoss(ValidationError):
    """Raised when a loss is requested over a mask with no valid entries"""
    pass


class NoBranchDetected(ValidationError):
    """Raised when a mask holds no waypoints to fit curves on"""
    pass


class InsufficientPoints(ValidationError):
    """Raised when a path has fewer than two points"""
    pass


class CoverageGap(ValidationError):
    """Raised in strict scoring when a prediction misses a ground-truth row"""

    def __init__(self, message: str, gaps: int = 0):
        super().__init__(message)
        self.gaps = gaps


class DegenerateVariance(ValidationError):
    """Raised when a correlation is requested on a constant series"""
    pass


class DivergenceDetected(Error):
    """Raised when training produces a non-finite loss or gradient (CLI exit code 3)"""

    def __init__(self, message: str, epoch: Optional[int] = None, history: Optional[List[Any]] = None):
        super().__init__(message)
        self.epoch = epoch
        self.history = history or []


class StorageError(Error):
    """Raised when on-disk artifacts are missing or unreadable (CLI exit code 4)"""
    pass


class MissingCheckpoint(StorageError):
    """Raised when a method's checkpoint cannot be found"""

    def __init__(self, method: str, path: Any):
        super().__init__(f"No checkpoint for method '{method}' at {path}")
        self.method = method
        self.path = path


class CheckpointError(StorageError):
    """Raised when a checkpoint is malformed or has an unsupported version"""
    pass


class DatasetError(StorageError):
    """Raised when the dataset layout on disk is incomplete"""
    pass
