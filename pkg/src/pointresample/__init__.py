"""Point cloud restoration by resampling along a learned gradient field."""

from .errors import InvalidArgumentError, InvalidInputError, NumericalFailureError, ParseError
from .geometry import (
    PointCloud,
    SpatialIndex,
    Transform,
    denormalize,
    extract_patches,
    farthest_point_sample,
    merge_patches,
    normalize_unit_sphere,
)

__version__ = "0.1.0"

__all__ = [
    "InvalidArgumentError",
    "InvalidInputError",
    "NumericalFailureError",
    "ParseError",
    "PointCloud",
    "SpatialIndex",
    "Transform",
    "denormalize",
    "extract_patches",
    "farthest_point_sample",
    "merge_patches",
    "normalize_unit_sphere",
]
