"""Exception hierarchy shared across the package.

CLI exit codes map onto these: SchemaError -> 2, InfeasibleSceneError and
EmptySceneError -> 3, NumericError -> 4. Plain ValueError is used for bad
arguments (wrong ranges, k > n, t out of bounds).
"""


class MotionfillError(Exception):
    """Base class for package-specific errors."""


class SchemaError(MotionfillError):
    """Shape, layout, or file-format mismatch."""


class InvalidRotationError(SchemaError):
    """Input does not decode to (or is not) a proper rotation."""


class EmptySceneError(MotionfillError):
    """Scene has no triangles where geometry is required."""


class InfeasibleSceneError(MotionfillError):
    """No valid path/motion exists for the requested scene setup."""


class NumericError(MotionfillError):
    """Non-finite values encountered where finite math is required."""


class ComparabilityError(MotionfillError):
    """Metric reports built with different feature extractors."""
