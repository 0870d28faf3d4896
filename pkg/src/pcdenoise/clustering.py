"""Keep the points of the k largest connected groups of occupied grid cells."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .cells import NEIGHBOR_OFFSETS_26
from .geometry import PointCloud
from .octree import UniformLeafGrid


@dataclass
class LeafGraph:
    """Occupied cells joined when their coordinates differ by at most 1 per axis.

    Adjacency is CSR: neighbours of vertex ``v`` are ``indices[indptr[v]:indptr[v + 1]]``.
    """

    cells: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def edges(self) -> set[tuple[int, int]]:
        src = np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))
        keep = src < self.indices
        return set(zip(src[keep].tolist(), self.indices[keep].tolist()))


@dataclass
class ComponentLabeling:
    """Component id per vertex; id 0 is the largest component.

    Components are ranked by vertex count, descending, with ties going to
    the component whose smallest cell coordinate is lexicographically first.
    """

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.sizes)


def build_leaf_graph(grid: UniformLeafGrid) -> LeafGraph:
    src, dst = grid.index.neighbor_pairs(grid.cells, NEIGHBOR_OFFSETS_26)
    n = grid.n_cells
    adj = sparse.csr_matrix((np.ones(len(src), dtype=np.int8), (src, dst)), shape=(n, n))
    adj.sort_indices()
    return LeafGraph(grid.cells, adj.indptr.astype(np.int64), adj.indices.astype(np.int64))


def connected_components(graph: LeafGraph) -> ComponentLabeling:
    n = graph.n_vertices
    if n == 0:
        return ComponentLabeling(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    adj = sparse.csr_matrix(
        (np.ones(len(graph.indices), dtype=np.int8), graph.indices, graph.indptr), shape=(n, n)
    )
    n_comp, raw = csgraph.connected_components(adj, directed=False)
    sizes = np.bincount(raw, minlength=n_comp)
    # cells are stored in lexicographic order, so the first vertex of a
    # component carries its smallest coordinate
    first = np.full(n_comp, n, dtype=np.int64)
    np.minimum.at(first, raw, np.arange(n))
    rank_order = np.lexsort((first, -sizes))
    relabel = np.empty(n_comp, dtype=np.int64)
    relabel[rank_order] = np.arange(n_comp)
    return ComponentLabeling(relabel[raw], sizes[rank_order])


def largest_cells(labeling: ComponentLabeling, k: int) -> np.ndarray:
    """Boolean cell mask selecting the k top-ranked components."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return labeling.labels < k


def extract_k_largest(grid: UniformLeafGrid, labeling: ComponentLabeling, k: int, cloud: PointCloud) -> PointCloud:
    """Points (with their labels) lying in the cells of the k largest components."""
    keep = largest_cells(labeling, k)
    idx = np.sort(grid.select_cells(keep).point_indices)
    return cloud.subset(idx)
