"""Point-cloud denoising via balanced octrees, density pruning and meshless Laplacian smoothing."""

from .geometry import (
    BoundingCube,
    EmptyInputError,
    InvalidPointError,
    Label,
    PointCloud,
    compute_bounding_cube,
    diagonal_length,
)
from .octree import Octree, OctreeDepthError, UniformLeafGrid, build_adaptive_octree, uniformize
from .pipeline import PipelineConfig, RunReport, run_pipeline

__all__ = [
    "BoundingCube",
    "EmptyInputError",
    "InvalidPointError",
    "Label",
    "Octree",
    "OctreeDepthError",
    "PipelineConfig",
    "PointCloud",
    "RunReport",
    "UniformLeafGrid",
    "build_adaptive_octree",
    "compute_bounding_cube",
    "diagonal_length",
    "run_pipeline",
    "uniformize",
]

__version__ = "0.1.0"
