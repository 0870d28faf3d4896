"""Iterative removal of cells with sparse neighbourhoods."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .cells import block_offsets
from .octree import UniformLeafGrid

logger = logging.getLogger(__name__)

BLOCK_RADIUS = 2  # 5x5x5 cells = a cube of side 5 * cell_size
PERCENTILE = 0.01
MIN_CELLS = 8


@dataclass
class NeighborhoodStats:
    sizes: np.ndarray
    n_avg: float
    n_sd: float


@dataclass
class FilterResult:
    grid: UniformLeafGrid
    iterations: int
    guard: str | None
    stats: NeighborhoodStats
    removed_cells: list[int] = field(default_factory=list)
    thresholds: list[int] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.guard is None


def _block_matrix(grid: UniformLeafGrid) -> sparse.csr_matrix:
    src, dst = grid.index.neighbor_pairs(grid.cells, block_offsets(BLOCK_RADIUS))
    n = grid.n_cells
    return sparse.csr_matrix((np.ones(len(src), dtype=np.int64), (src, dst)), shape=(n, n))


def neighborhood_sizes(grid: UniformLeafGrid) -> np.ndarray:
    """Point count of the 5x5x5 cell block centred on every occupied cell."""
    return _block_matrix(grid) @ grid.counts


def neighborhood_size(grid: UniformLeafGrid, cell) -> int:
    """Neighbourhood size of the cell at integer coordinates ``cell``."""
    cell = np.asarray(cell, dtype=np.int64).reshape(1, 3)
    if grid.index.find(cell)[0] < 0:
        raise KeyError(f"cell {tuple(cell[0])} is not occupied")
    rows = grid.index.find(cell + block_offsets(BLOCK_RADIUS))
    return int(grid.counts[rows[rows >= 0]].sum())


def summarize(sizes: np.ndarray) -> NeighborhoodStats:
    sizes = np.asarray(sizes)
    if sizes.size == 0:
        return NeighborhoodStats(sizes, 0.0, 0.0)
    return NeighborhoodStats(sizes, float(sizes.mean()), float(sizes.std()))


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Value at 1-based rank ceil(q * m) of the ascending values (at least rank 1)."""
    ordered = np.sort(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def prune_very_noisy(grid: UniformLeafGrid, beta: float = 2.0) -> FilterResult:
    """Drop 1-percentile cells until beta * n_sd <= n_avg.

    Each round removes every cell whose neighbourhood size is at or below
    the nearest-rank 1st percentile. Stops early, reporting ``guard``, when
    fewer than 8 cells remain or a round removes nothing.
    """
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if grid.n_cells == 0:
        raise ValueError("empty grid")
    block = _block_matrix(grid)
    counts = grid.counts.astype(np.int64).copy()
    alive = np.ones(grid.n_cells, dtype=bool)
    result = FilterResult(grid, 0, None, summarize(block @ counts))
    while True:
        sizes = (block @ counts)[alive]
        stats = summarize(sizes)
        result.stats = stats
        if beta * stats.n_sd <= stats.n_avg:
            break
        if alive.sum() < MIN_CELLS:
            result.guard = "too_few_cells"
            break
        threshold = nearest_rank(sizes, PERCENTILE)
        drop = np.flatnonzero(alive)[sizes <= threshold]
        if drop.size == 0:
            result.guard = "no_progress"
            break
        alive[drop] = False
        counts[drop] = 0
        result.iterations += 1
        result.removed_cells.append(int(drop.size))
        result.thresholds.append(int(threshold))
    if result.guard:
        logger.warning("density filter stopped by guard %s after %d rounds", result.guard, result.iterations)
    result.grid = grid.select_cells(alive)
    return result
