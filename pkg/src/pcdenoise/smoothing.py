"""Meshless Laplacian smoothing on per-leaf mean points.

The smoothed set is one representative per non-empty leaf of a fresh
balanced octree. Each representative keeps at most 24 neighbours, one per
square of the 4x6 partition of a small cube's boundary around it, so that
dense directions do not dominate the Laplacian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud
from .octree import build_adaptive_octree, uniformize

logger = logging.getLogger(__name__)

BALL_FACTOR = 4.0
N_GROUPS = 24
COINCIDENT_TOL = 1e-12
_BRUTE_FORCE_BELOW = 1000
_CHUNK = 20000


@dataclass
class SmoothingConfig:
    lam: float = 0.25
    gamma: float = 40.0
    max_iterations: int | None = None  # None: derive the cap from the data

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must be in (0, 1]")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class Representative:
    position: np.ndarray
    leaf_size: float
    neighbor_ids: np.ndarray


@dataclass
class RepresentativeSet:
    """Mean points of occupied leaves and their frozen neighbour lists (CSR)."""

    positions: np.ndarray
    leaf_sizes: np.ndarray
    indptr: np.ndarray | None = None
    indices: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Representative:
        nb = self.neighbors(i) if self.indptr is not None else np.empty(0, dtype=np.int64)
        return Representative(self.positions[i], float(self.leaf_sizes[i]), nb)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    @property
    def neighbor_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def pair_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(owner, neighbour) index arrays for every stored neighbour relation."""
        src = np.repeat(np.arange(len(self), dtype=np.int64), self.neighbor_counts)
        return src, self.indices

    def permuted(self, perm: np.ndarray) -> RepresentativeSet:
        """Same set with representative ``perm[k]`` moved to position ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        rows = [inv[self.neighbors(p)] for p in perm]
        indptr = np.zeros(len(perm) + 1, dtype=np.int64)
        np.cumsum([len(r) for r in rows], out=indptr[1:])
        indices = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        return RepresentativeSet(self.positions[perm], self.leaf_sizes[perm], indptr, indices.astype(np.int64))


def build_representatives(cloud, uniform: bool = False, alpha: float = 2.0) -> RepresentativeSet:
    """Mean point of each non-empty leaf of a new octree over ``cloud``.

    With ``uniform=True`` the leaves are the cells of the uniformized grid
    instead of the adaptive octree leaves.
    """
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    tree = build_adaptive_octree(cloud)
    pts = cloud.points
    if uniform:
        grid = uniformize(tree, cloud, alpha)
        owner = np.empty(len(pts), dtype=np.int64)
        owner[grid.point_indices] = grid.point_cells()
        n = grid.n_cells
        sizes = np.full(n, grid.cell_size)
    else:
        owner = tree.point_leaf
        n = tree.n_occupied
        sizes = tree.occupied_sizes.copy()
    counts = np.bincount(owner, minlength=n).astype(np.float64)
    means = np.stack([np.bincount(owner, weights=pts[:, a], minlength=n) for a in range(3)], axis=1)
    return RepresentativeSet(means / counts[:, None], sizes)


def boundary_square(direction: np.ndarray) -> np.ndarray:
    """Index in [0, 24) of the boundary square hit by rays along ``direction``.

    The exit face is the axis of largest absolute component (first axis on
    ties); the 2x2 sub-square of that face follows the signs of the two
    remaining components, with zero counted as positive.
    """
    d = np.atleast_2d(direction)
    face = np.argmax(np.abs(d), axis=1)
    rows = np.arange(len(d))
    main_pos = d[rows, face] >= 0
    u_axis = (face + 1) % 3
    v_axis = (face + 2) % 3
    u_pos = d[rows, u_axis] >= 0
    v_pos = d[rows, v_axis] >= 0
    return face * 8 + main_pos * 4 + u_pos * 2 + v_pos


def _candidate_pairs(positions, radii, start, stop, tree):
    if tree is None:
        chunk = positions[start:stop]
        dist = np.linalg.norm(chunk[:, None, :] - positions[None, :, :], axis=2)
        ii, jj = np.nonzero(dist <= radii[start:stop, None])
        return ii + start, jj.astype(np.int64)
    hits = tree.query_ball_point(positions[start:stop], radii[start:stop], return_sorted=False)
    lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    src = np.repeat(np.arange(start, stop, dtype=np.int64), lens)
    dst = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits]) if len(hits) else np.empty(0, np.int64)
    return src, dst


def select_neighbors(reps: RepresentativeSet) -> RepresentativeSet:
    """Fill ``reps`` with at most one neighbour per boundary square.

    Candidates of representative i are the others within ``4 * leaf_size``;
    within each square the closest wins, ties going to the smaller index.
    """
    pos = reps.positions
    radii = BALL_FACTOR * reps.leaf_sizes
    n = len(pos)
    tree = cKDTree(pos) if n >= _BRUTE_FORCE_BELOW else None
    src_parts, dst_parts = [], []
    for start in range(0, n, _CHUNK):
        stop = min(n, start + _CHUNK)
        src, dst = _candidate_pairs(pos, radii, start, stop, tree)
        diff = np.take(pos, dst, axis=0) - np.take(pos, src, axis=0)
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        ok = (src != dst) & (dist >= COINCIDENT_TOL * reps.leaf_sizes[src]) & (dist <= radii[src])
        src, dst, diff, dist = src[ok], dst[ok], diff[ok], dist[ok]
        key = (src - start) * N_GROUPS + boundary_square(diff)
        order = np.argsort(key, kind="stable")
        key, dst, dist = key[order], dst[order], dist[order]
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]]) if len(key) else np.empty(0, np.int64)
        seg = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(key)]))
        # nearest per (point, square), then the smallest id among exact ties
        nearest = dist == np.minimum.reduceat(dist, starts)[seg] if len(key) else np.empty(0, bool)
        best = np.full(len(starts), np.iinfo(np.int64).max)
        np.minimum.at(best, seg[nearest], dst[nearest])
        key = key[starts]
        rows = key // N_GROUPS + start
        order = np.lexsort((best, rows))
        src_parts.append(rows[order])
        dst_parts.append(best[order])
    src = np.concatenate(src_parts) if src_parts else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    reps.indptr, reps.indices = indptr, dst
    return reps


@dataclass
class StepResult:
    positions: np.ndarray
    moved: int
    weights: np.ndarray
    mean_distance: np.ndarray
    max_distance: np.ndarray


def smooth_step(reps: RepresentativeSet, positions: np.ndarray, config: SmoothingConfig) -> StepResult:
    """One simultaneous update of every representative from ``positions``.

    Each point moves ``lam`` of the way towards the Gaussian-weighted mean of
    its neighbours (scale = farthest neighbour), but only when that move is
    longer than the mean neighbour distance divided by ``gamma``.
    """
    n = len(positions)
    src, dst = reps.pair_arrays()
    cnt = reps.neighbor_counts
    has = cnt > 0
    # rows are contiguous in CSR order, so segment reductions replace scatters
    seg = reps.indptr[:-1][has]
    diff = np.take(positions, dst, axis=0) - np.take(positions, src, axis=0)
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    mean_d = np.zeros(n)
    max_d = np.zeros(n)
    if len(dist):
        mean_d[has] = np.add.reduceat(dist, seg) / cnt[has]
        max_d[has] = np.maximum.reduceat(dist, seg)
    active = has & (max_d > 0)
    scale = np.where(active, max_d, 1.0)[src]
    w = np.exp(-(dist * dist) / (scale * scale))
    disp = np.zeros_like(positions)
    if len(dist):
        wsum = np.add.reduceat(w, seg)
        num = np.add.reduceat(diff * w[:, None], seg, axis=0)
        act = active[has]
        disp[np.flatnonzero(has)[act]] = config.lam * num[act] / wsum[act, None]
    step = np.sqrt(np.einsum("ij,ij->i", disp, disp))
    accept = active & (step > mean_d / config.gamma)
    new = positions.copy()
    new[accept] += disp[accept]
    return StepResult(new, int(accept.sum()), w, mean_d, max_d)


def compute_iteration_cap(reps: RepresentativeSet) -> int:
    """floor(d_avg**2 * |Q| / 2) with distances measured after scaling Q into a side-2 cube.

    d_avg averages, over representatives that have neighbours, the mean
    distance to those neighbours.
    """
    n = len(reps)
    if n == 0 or reps.indptr is None:
        return 0
    cnt = reps.neighbor_counts
    has = cnt > 0
    if not has.any():
        return 0
    extent = float(np.max(reps.positions.max(axis=0) - reps.positions.min(axis=0)))
    if extent <= 0:
        return 0
    src, dst = reps.pair_arrays()
    dist = np.linalg.norm(reps.positions[dst] - reps.positions[src], axis=1) * (2.0 / extent)
    d_q = np.bincount(src, weights=dist, minlength=n)[has] / cnt[has]
    d_avg = float(d_q.mean())
    return int(math.floor(d_avg * d_avg * n / 2.0))


@dataclass
class SmoothResult:
    positions: np.ndarray
    iterations: int
    cap: int
    moved: list[int] = field(default_factory=list)


def smooth(reps: RepresentativeSet, config: SmoothingConfig | None = None, callback=None) -> SmoothResult:
    """Repeat :func:`smooth_step` until nothing moves or the iteration cap is hit.

    ``callback(iteration, previous_positions, step_result)`` is invoked after
    every step when given.
    """
    config = config or SmoothingConfig()
    if reps.indptr is None:
        select_neighbors(reps)
    cap = compute_iteration_cap(reps) if config.max_iterations is None else config.max_iterations
    positions = reps.positions.copy()
    result = SmoothResult(positions, 0, cap)
    while result.iterations < cap:
        step = smooth_step(reps, positions, config)
        result.iterations += 1
        result.moved.append(step.moved)
        if callback is not None:
            callback(result.iterations, positions, step)
        positions = step.positions
        if step.moved == 0:
            break
    logger.debug("smoothing ran %d of %d iterations", result.iterations, cap)
    result.positions = positions
    return result
