"""Basic point-set types and bounding volumes."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class EmptyInputError(ValueError):
    def __init__(self, msg: str = "empty input"):
        super().__init__(msg)


class InvalidPointError(ValueError):
    def __init__(self, msg: str = "invalid point"):
        super().__init__(msg)


class Label(enum.IntEnum):
    """Ground-truth provenance of a point, stored as a small integer."""

    SURFACE = 0
    WHITE_NOISE = 1
    OUTLIER = 2


def as_points(points) -> np.ndarray:
    """Return ``points`` as a C-contiguous float64 array of shape (n, 3)."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got shape {arr.shape}")
    return arr


@dataclass
class PointCloud:
    """Indexed 3D points with optional per-point :class:`Label` values."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int8)
            if self.labels.shape != (len(self.points),):
                raise ValueError(
                    f"labels length {self.labels.shape} does not match {len(self.points)} points"
                )

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, index) -> PointCloud:
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.points[index], labels)

    def count(self, label: Label) -> int:
        if self.labels is None:
            return 0
        return int(np.count_nonzero(self.labels == label))

    def validate(self) -> None:
        if len(self.points) == 0:
            raise EmptyInputError()
        if not np.isfinite(self.points).all():
            bad = int(np.flatnonzero(~np.isfinite(self.points).all(axis=1))[0])
            raise InvalidPointError(f"invalid point at index {bad}")


@dataclass(frozen=True)
class BoundingCube:
    min_corner: np.ndarray
    side: float

    @property
    def center(self) -> np.ndarray:
        return self.min_corner + 0.5 * self.side

    @property
    def max_corner(self) -> np.ndarray:
        return self.min_corner + self.side

    def contains(self, points) -> np.ndarray:
        pts = as_points(points)
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=1)


def _points_of(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if len(pts) == 0:
        raise EmptyInputError()
    if not np.isfinite(pts).all():
        raise InvalidPointError()
    return pts


def compute_bounding_cube(cloud) -> BoundingCube:
    """Axis-aligned cube whose side is the largest extent of the points.

    The cube is centred on the tight bounding box, so along the shorter
    axes the points sit in the middle of the cube. A cloud whose points all
    coincide gets a unit cube centred on them.
    """
    pts = _points_of(cloud)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    side = float(np.max(hi - lo))
    if side <= 0.0:
        side = 1.0
    center = 0.5 * (lo + hi)
    corner = center - 0.5 * side
    # guard against rounding leaving a point a hair outside
    corner = np.minimum(corner, lo)
    step = float(np.spacing(np.abs(hi).max()))
    while np.any(corner + side < hi):
        side = max(float(np.nextafter(side, np.inf)), side + step)
    return BoundingCube(corner, side)


def diagonal_length(cloud) -> float:
    """Length of the diagonal of the tight axis-aligned bounding box."""
    pts = _points_of(cloud)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
