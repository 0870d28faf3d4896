"""Postprocessing of a reconstructed triangle mesh."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

DEGENERATE_TOL = 1e-15


class DegenerateTriangleError(ValueError):
    def __init__(self, msg: str = "degenerate triangle"):
        super().__init__(msg)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        t = self.triangles
        if len(t) and (t.min() < 0 or t.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("triangle with repeated vertex index")

    def compact(self) -> TriangleMesh:
        """Drop vertices referenced by no triangle, renumbering the rest."""
        used = np.unique(self.triangles)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(self.vertices[used], remap[self.triangles])


def circumradii(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Circumradius abc / (4 * area) of each triangle given by rows of a, b, c."""
    a, b, c = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (a, b, c))
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    longest = np.maximum(np.maximum(ab, bc), ca)
    if np.any(area <= DEGENERATE_TOL * longest * longest):
        raise DegenerateTriangleError()
    return ab * bc * ca / (4.0 * area)


def circumradius(a, b, c) -> float:
    return float(circumradii(a, b, c)[0])


def mesh_circumradii(mesh: TriangleMesh) -> np.ndarray:
    v, t = mesh.vertices, mesh.triangles
    return circumradii(v[t[:, 0]], v[t[:, 1]], v[t[:, 2]])


def prune_large_triangles(mesh: TriangleMesh, epsilon: float = 10.0) -> TriangleMesh:
    """Remove triangles whose circumradius exceeds mean + epsilon * std (population)."""
    if len(mesh.triangles) == 0:
        raise ValueError("mesh has no triangles")
    r = mesh_circumradii(mesh)
    threshold = r.mean() + epsilon * r.std()
    return TriangleMesh(mesh.vertices, mesh.triangles[~(r > threshold)])


def one_ring(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Symmetric 0/1 vertex adjacency over triangle edges."""
    t = mesh.triangles
    n = len(mesh.vertices)
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    adj = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    adj.data[:] = 1.0
    return adj


def mesh_laplacian_smooth(mesh: TriangleMesh, iterations: int = 3, step: float = 0.5) -> TriangleMesh:
    """Uniform-weight 1-ring Laplacian smoothing with simultaneous updates."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if not 0 < step <= 1:
        raise ValueError("step must be in (0, 1]")
    adj = one_ring(mesh)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    has = deg > 0
    v = mesh.vertices.copy()
    for _ in range(iterations):
        avg = adj @ v
        avg[has] /= deg[has, None]
        v[has] += step * (avg[has] - v[has])
    return TriangleMesh(v, mesh.triangles.copy())
