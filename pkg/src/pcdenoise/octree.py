"""Balanced adaptive octree and its conversion to a uniform cell grid.

A node is addressed by ``(level, (i, j, k))``: the cube of side
``root_side / 2**level`` whose minimum corner is ``origin + side * (i, j, k)``.
Point membership is decided once, by quantizing every point to 63-bit
integer coordinates inside the root cube; the cell of a point at any level
is then a right shift of those codes, so all levels agree exactly.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .cells import NEIGHBOR_OFFSETS_26, CellIndex, row_keys
from .geometry import BoundingCube, PointCloud, compute_bounding_cube

logger = logging.getLogger(__name__)

QUANT_BITS = 63
SUBDIVISION = 8  # splittability grid per axis
_SUB_LEVELS = 3  # log2(SUBDIVISION)
DEFAULT_MAX_DEPTH = 64


class OctreeDepthError(RuntimeError):
    def __init__(self, level: int):
        super().__init__(f"octree depth exceeded (level {level})")
        self.level = level


def quantize(points: np.ndarray, cube: BoundingCube) -> np.ndarray:
    """Integer codes in [0, 2**63) per axis; the max face clamps to the last cell."""
    t = (points - cube.min_corner) / cube.side
    scaled = np.floor(t * float(1 << QUANT_BITS))
    scaled = np.clip(scaled, 0.0, float(np.nextafter(2.0**QUANT_BITS, 0)))
    codes = scaled.astype(np.int64)
    return np.minimum(codes, (1 << QUANT_BITS) - 1)


def _cells_at(codes: np.ndarray, level: int) -> np.ndarray:
    return codes >> (QUANT_BITS - level)


@dataclass(frozen=True)
class OctreeNode:
    level: int
    coords: tuple[int, int, int]
    cube: BoundingCube
    point_indices: np.ndarray
    is_leaf: bool = True

    @property
    def size(self) -> float:
        return self.cube.side

    @property
    def center(self) -> np.ndarray:
        return self.cube.center


def is_splittable(node: OctreeNode, cloud) -> bool:
    """True when the node's points occupy at least two of its 8x8x8 subcells."""
    idx = np.asarray(node.point_indices, dtype=np.int64)
    if idx.size < 2:
        return False
    pts = cloud.points[idx] if isinstance(cloud, PointCloud) else np.asarray(cloud)[idx]
    width = node.cube.side / SUBDIVISION
    sub = np.floor((pts - node.cube.min_corner) / width).astype(np.int64)
    sub = np.clip(sub, 0, SUBDIVISION - 1)
    return bool(np.any(sub != sub[0]))


class _KeySet:
    """Per-level sorted key arrays of internal (split) nodes."""

    def __init__(self):
        self.keys: dict[int, np.ndarray] = {}

    def __contains__(self, level: int) -> bool:
        return level in self.keys and len(self.keys[level]) > 0

    def levels(self) -> list[int]:
        return sorted(m for m in self.keys if len(self.keys[m]))

    def member(self, level: int, coords: np.ndarray) -> np.ndarray:
        table = self.keys.get(level)
        if table is None or len(table) == 0 or len(coords) == 0:
            return np.zeros(len(coords), dtype=bool)
        return _sorted_member(table, row_keys(coords, level))

    def add(self, level: int, coords: np.ndarray) -> np.ndarray:
        """Insert cells; returns the coordinates of those not already present."""
        if len(coords) == 0:
            return coords.reshape(0, 3)
        keys, first = np.unique(row_keys(coords, level), return_index=True)
        coords = coords[first]
        table = self.keys.get(level)
        if table is not None and len(table):
            fresh = ~_sorted_member(table, keys)
            keys, coords = keys[fresh], coords[fresh]
            if len(keys):
                self.keys[level] = np.sort(np.concatenate([table, keys]))
        else:
            self.keys[level] = keys
        return coords

    def coords(self, level: int) -> np.ndarray:
        return decode_keys(self.keys.get(level, np.empty(0, np.int64)), level)


def _sorted_member(table: np.ndarray, keys: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(table, keys)
    pos = np.minimum(pos, len(table) - 1)
    return table[pos] == keys


def decode_keys(keys: np.ndarray, level: int) -> np.ndarray:
    if len(keys) == 0:
        return np.empty((0, 3), dtype=np.int64)
    if level <= 21:
        mask = (1 << 21) - 1
        return np.stack([keys >> 42, (keys >> 21) & mask, keys & mask], axis=1)
    return np.frombuffer(keys.tobytes(), dtype=">i8").reshape(-1, 3).astype(np.int64)


@dataclass
class Octree:
    """A balanced octree over a point cloud.

    ``internal`` holds the split nodes per level. The non-empty leaves are
    ``occupied_level``/``occupied_coords`` and ``point_leaf`` maps every point
    to one of them. The complete leaf set, empty leaves included, is derived
    on first access through ``leaf_level``/``leaf_coords``.
    """

    cube: BoundingCube
    internal: _KeySet
    occupied_level: np.ndarray
    occupied_coords: np.ndarray
    point_leaf: np.ndarray
    max_depth: int = DEFAULT_MAX_DEPTH

    @property
    def root_side(self) -> float:
        return self.cube.side

    @property
    def n_points(self) -> int:
        return len(self.point_leaf)

    @property
    def n_occupied(self) -> int:
        return len(self.occupied_level)

    @cached_property
    def occupied_sizes(self) -> np.ndarray:
        return self.cube.side / np.exp2(self.occupied_level.astype(np.float64))

    @cached_property
    def occupied_counts(self) -> np.ndarray:
        return np.bincount(self.point_leaf, minlength=self.n_occupied)

    @cached_property
    def _offsets(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.point_leaf, kind="stable")
        offsets = np.zeros(self.n_occupied + 1, dtype=np.int64)
        np.cumsum(self.occupied_counts, out=offsets[1:])
        return order, offsets

    def occupied_points(self, leaf: int) -> np.ndarray:
        order, offsets = self._offsets
        return order[offsets[leaf] : offsets[leaf + 1]]

    @cached_property
    def _all_leaves(self) -> tuple[np.ndarray, np.ndarray]:
        return _collect_leaves(self.internal)

    @property
    def leaf_level(self) -> np.ndarray:
        return self._all_leaves[0]

    @property
    def leaf_coords(self) -> np.ndarray:
        return self._all_leaves[1]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_level)

    @cached_property
    def leaf_sizes(self) -> np.ndarray:
        return self.cube.side / np.exp2(self.leaf_level.astype(np.float64))

    @cached_property
    def registry(self) -> dict[tuple[int, tuple[int, int, int]], int]:
        """(level, coords) -> position in ``leaf_level``/``leaf_coords``."""
        return {
            (lv, tuple(c)): i
            for i, (lv, c) in enumerate(zip(self.leaf_level.tolist(), self.leaf_coords.tolist()))
        }

    @cached_property
    def _occupied_registry(self) -> dict[tuple[int, tuple[int, int, int]], int]:
        return {
            (lv, tuple(c)): i
            for i, (lv, c) in enumerate(zip(self.occupied_level.tolist(), self.occupied_coords.tolist()))
        }

    @cached_property
    def leaf_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_leaves, dtype=np.int64)
        reg = self.registry
        for lv, c, n in zip(self.occupied_level.tolist(), self.occupied_coords.tolist(), self.occupied_counts.tolist()):
            counts[reg[(lv, tuple(c))]] = n
        return counts

    def find_leaf(self, level: int, coords) -> int | None:
        return self.registry.get((int(level), tuple(int(v) for v in coords)))

    def node_cube(self, level: int, coords) -> BoundingCube:
        size = self.cube.side / 2.0**level
        return BoundingCube(self.cube.min_corner + size * np.asarray(coords, dtype=np.float64), size)

    def is_internal(self, level: int, coords) -> bool:
        return bool(self.internal.member(level, np.asarray(coords, dtype=np.int64).reshape(1, 3))[0])

    def node(self, level: int, coords) -> OctreeNode:
        coords = tuple(int(v) for v in coords)
        cube = self.node_cube(level, coords)
        if self.is_internal(level, coords):
            return OctreeNode(level, coords, cube, self._points_below(level, coords), False)
        if self.find_leaf(level, coords) is None:
            raise KeyError(f"no node at level {level}, coords {coords}")
        occ = self._occupied_registry.get((level, coords))
        pts = self.occupied_points(occ) if occ is not None else np.empty(0, dtype=np.int64)
        return OctreeNode(level, coords, cube, pts, True)

    def _points_below(self, level: int, coords) -> np.ndarray:
        lv = self.occupied_level[self.point_leaf]
        anc = self.occupied_coords[self.point_leaf] >> np.maximum(lv - level, 0)[:, None]
        ok = (lv >= level) & np.all(anc == np.asarray(coords), axis=1)
        return np.flatnonzero(ok)

    @property
    def root(self) -> OctreeNode:
        return self.node(0, (0, 0, 0))

    def children(self, node: OctreeNode) -> list[OctreeNode]:
        if node.is_leaf:
            return []
        base = 2 * np.asarray(node.coords)
        return [self.node(node.level + 1, base + off) for off in _CHILD_OFFSETS]

    def occupied_leaves(self):
        for i in range(self.n_occupied):
            c = tuple(int(v) for v in self.occupied_coords[i])
            lv = int(self.occupied_level[i])
            yield OctreeNode(lv, c, self.node_cube(lv, c), self.occupied_points(i), True)

    def level_histogram(self, nonempty_only: bool = False) -> dict[int, int]:
        levels = self.occupied_level if nonempty_only else self.leaf_level
        vals, counts = np.unique(levels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


_CHILD_OFFSETS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)


def _group(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable sort order, group start positions and group id per sorted row."""
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    new = np.r_[True, skeys[1:] != skeys[:-1]]
    return order, np.flatnonzero(new), np.cumsum(new) - 1


def _leaf_depths(codes: np.ndarray, internal: _KeySet) -> np.ndarray:
    depth = np.zeros(len(codes), dtype=np.int64)
    level = 0
    while level in internal:
        sel = np.flatnonzero(depth == level)
        if sel.size == 0:
            break
        inside = internal.member(level, _cells_at(codes[sel], level))
        depth[sel[inside]] += 1
        level += 1
    return depth


def _split_pass(codes, depth, candidates, internal, pending, max_depth) -> None:
    """Split every splittable leaf holding candidate points, top-down.

    Every leaf that contains a candidate point must contain only candidate
    points; newly split cells are appended to ``pending`` for balancing.
    """
    cand = candidates
    while cand.size:
        level = int(depth[cand].min())
        at = depth[cand] == level
        sel, cand = cand[at], cand[~at]
        coarse = _cells_at(codes[sel], level)
        fine = _cells_at(codes[sel], min(level + _SUB_LEVELS, QUANT_BITS))
        order, starts, group_of = _group(row_keys(coarse, level))
        fine_sorted = fine[order]
        differs = np.any(fine_sorted != fine_sorted[starts][group_of], axis=1)
        split_group = np.logical_or.reduceat(differs, starts)
        if not split_group.any():
            continue
        if level + _SUB_LEVELS > QUANT_BITS or level + 1 > max_depth:
            raise OctreeDepthError(level + 1)
        new_cells = internal.add(level, coarse[order][starts[split_group]])
        pending.setdefault(level, []).append(new_cells)
        moved = sel[order[split_group[group_of]]]
        depth[moved] += 1
        cand = np.concatenate([cand, moved])


def _balance_pass(internal: _KeySet, pending: dict[int, list]) -> dict[int, np.ndarray]:
    """Force-split every cell that touches an internal node two levels finer.

    A leaf at level m-1 touching an internal node z at level m would border
    leaves of level >= m+1. The level-(m-1) cells touching z form the 2x2x2
    block starting at (z-1)//2, which also contains z's parent. Only nodes in
    ``pending`` (not yet balanced) are examined; the cells forced here are
    returned per level.
    """
    forced: dict[int, np.ndarray] = {}
    if not pending:
        return forced
    for m in range(max(pending), 0, -1):
        parts = pending.pop(m, [])
        if not parts:
            continue
        z = np.concatenate(parts)
        if len(z) == 0:
            continue
        limit = 1 << (m - 1)
        block = (((z - 1) >> 1)[:, None, :] + _CHILD_OFFSETS[None, :, :]).reshape(-1, 3)
        block = block[np.all((block >= 0) & (block < limit), axis=1)]
        new = internal.add(m - 1, block)
        if len(new):
            forced[m - 1] = new
            pending.setdefault(m - 1, []).append(new)
    pending.clear()
    return forced


def _descend_forced(codes, depth, forced: dict[int, np.ndarray]) -> np.ndarray:
    """Move points whose leaf was force-split down to their new leaf depth."""
    keysets = {m: np.sort(row_keys(c, m)) for m, c in forced.items()}
    moved_all = []
    cand = np.arange(len(codes), dtype=np.int64)
    while cand.size:
        nxt = []
        for lv in np.unique(depth[cand]).tolist():
            table = keysets.get(lv)
            if table is None:
                continue
            sel = cand[depth[cand] == lv]
            hit = _sorted_member(table, row_keys(_cells_at(codes[sel], lv), lv))
            nxt.append(sel[hit])
        cand = np.concatenate(nxt) if nxt else np.empty(0, dtype=np.int64)
        depth[cand] += 1
        moved_all.append(cand)
    return np.unique(np.concatenate(moved_all)) if moved_all else np.empty(0, dtype=np.int64)


def _collect_leaves(internal: _KeySet) -> tuple[np.ndarray, np.ndarray]:
    if 0 not in internal:
        return np.zeros(1, dtype=np.int64), np.zeros((1, 3), dtype=np.int64)
    levels, coords = [], []
    for m in internal.levels():
        parents = internal.coords(m)
        kids = (2 * parents[:, None, :] + _CHILD_OFFSETS[None, :, :]).reshape(-1, 3)
        kids = kids[~internal.member(m + 1, kids)]
        keys, first = np.unique(row_keys(kids, m + 1), return_index=True)
        levels.append(np.full(len(keys), m + 1, dtype=np.int64))
        coords.append(kids[first])
    return np.concatenate(levels), np.concatenate(coords)


def _occupied(codes, depth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct (depth, cell) pairs of the points, ordered by level then coordinates."""
    point_leaf = np.empty(len(codes), dtype=np.int64)
    levels, coords = [], []
    base = 0
    for lv in np.unique(depth).tolist():
        sel = np.flatnonzero(depth == lv)
        cells = _cells_at(codes[sel], lv)
        keys, first, inverse = np.unique(row_keys(cells, lv), return_index=True, return_inverse=True)
        point_leaf[sel] = base + inverse.ravel()
        levels.append(np.full(len(keys), lv, dtype=np.int64))
        coords.append(cells[first])
        base += len(keys)
    return np.concatenate(levels), np.concatenate(coords), point_leaf


def build_adaptive_octree(
    cloud, max_depth: int = DEFAULT_MAX_DEPTH, method: str = "levels"
) -> Octree:
    """Build the balanced octree in which no non-empty leaf is splittable.

    ``method="levels"`` alternates vectorized split and balance sweeps until
    the balance sweep forces no further split. ``method="queue"`` runs the
    dequeue/split/rebalance loop one node at a time; it is slow and meant for
    checking. Both reach the smallest tree that is balanced and has no
    splittable leaf, so their outputs are identical.
    """
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    cloud.validate()
    cube = compute_bounding_cube(cloud)
    codes = quantize(cloud.points, cube)
    if method == "queue":
        internal = _queue_build(codes, max_depth)
        depth = _leaf_depths(codes, internal)
    elif method == "levels":
        internal = _KeySet()
        pending: dict[int, list] = {}
        depth = np.zeros(len(codes), dtype=np.int64)
        candidates = np.arange(len(codes), dtype=np.int64)
        rounds = 0
        while candidates.size:
            rounds += 1
            _split_pass(codes, depth, candidates, internal, pending, max_depth)
            forced = _balance_pass(internal, pending)
            candidates = _descend_forced(codes, depth, forced) if forced else candidates[:0]
        logger.debug("octree converged after %d split/balance rounds", rounds)
    else:
        raise ValueError(f"unknown octree method {method!r}")
    occ_level, occ_coords, point_leaf = _occupied(codes, depth)
    return Octree(cube, internal, occ_level, occ_coords, point_leaf, max_depth)


def _queue_build(codes: np.ndarray, max_depth: int) -> _KeySet:
    leaves: dict[tuple, list[int]] = {(0, 0, 0, 0): list(range(len(codes)))}
    internal: set[tuple] = set()

    def splittable(key) -> bool:
        pts = leaves[key]
        if len(pts) < 2:
            return False
        level = key[0]
        fine = _cells_at(codes[pts], min(level + _SUB_LEVELS, QUANT_BITS))
        if not np.any(fine != fine[0]):
            return False
        if level + _SUB_LEVELS > QUANT_BITS or level + 1 > max_depth:
            raise OctreeDepthError(level + 1)
        return True

    def split(key) -> list[tuple]:
        level, x, y, z = key
        pts = leaves.pop(key)
        internal.add(key)
        kids = [(level + 1, 2 * x + i, 2 * y + j, 2 * z + k) for i, j, k in _CHILD_OFFSETS.tolist()]
        buckets: dict[tuple, list[int]] = {kid: [] for kid in kids}
        if pts:
            cells = _cells_at(codes[pts], level + 1)
            for p, c in zip(pts, map(tuple, cells.tolist())):
                buckets[(level + 1, *c)].append(p)
        leaves.update(buckets)
        for kid in kids:
            balance(kid)
        queue.extend(kids)
        return kids

    def balance(kid) -> None:
        level, x, y, z = kid
        if level < 2:
            return
        limit = 1 << level
        for dx, dy, dz in NEIGHBOR_OFFSETS_26.tolist():
            nx, ny, nz = x + dx, y + dy, z + dz
            if not (0 <= nx < limit and 0 <= ny < limit and 0 <= nz < limit):
                continue
            big = (level - 2, nx >> 2, ny >> 2, nz >> 2)
            if big in leaves:
                split(big)

    queue = collections.deque([(0, 0, 0, 0)])
    while queue:
        key = queue.popleft()
        if key in leaves and splittable(key):
            split(key)

    by_level: dict[int, list] = collections.defaultdict(list)
    for level, x, y, z in internal:
        by_level[level].append((x, y, z))
    keyset = _KeySet()
    for m, cells in by_level.items():
        keyset.add(m, np.array(cells, dtype=np.int64))
    return keyset


def mean_leaf_size(tree: Octree) -> float:
    """Mean side length over the non-empty leaves."""
    if tree.n_occupied == 0:
        raise ValueError("octree has no non-empty leaves")
    return float(tree.occupied_sizes.mean())


@dataclass
class UniformLeafGrid:
    """Occupied cells of side ``cell_size`` tiling the root cube.

    Points are stored grouped by cell: the indices of cell ``c`` are
    ``point_indices[offsets[c]:offsets[c + 1]]``, and ``cells`` is sorted
    lexicographically.
    """

    cell_size: float
    origin: np.ndarray
    level: int
    cells: np.ndarray
    offsets: np.ndarray
    point_indices: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def n_points(self) -> int:
        return int(self.offsets[-1])

    def cell_points(self, cell: int) -> np.ndarray:
        return self.point_indices[self.offsets[cell] : self.offsets[cell + 1]]

    @cached_property
    def index(self) -> CellIndex:
        return CellIndex(self.cells)

    def as_dict(self) -> dict[tuple[int, int, int], np.ndarray]:
        return {tuple(int(v) for v in c): self.cell_points(i) for i, c in enumerate(self.cells)}

    def cell_centers(self) -> np.ndarray:
        return self.origin + (self.cells + 0.5) * self.cell_size

    def point_cells(self) -> np.ndarray:
        """Cell row of each entry of ``point_indices``."""
        return np.repeat(np.arange(self.n_cells), self.counts)

    def select_cells(self, keep: np.ndarray) -> UniformLeafGrid:
        """Grid restricted to the cells where the boolean mask ``keep`` is set."""
        keep = np.asarray(keep, dtype=bool)
        counts = self.counts[keep]
        offsets = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        pts = self.point_indices[np.repeat(keep, self.counts)]
        return UniformLeafGrid(self.cell_size, self.origin, self.level, self.cells[keep], offsets, pts)


def grid_level(root_side: float, l_avg: float, alpha: float) -> int:
    """Smallest d >= 0 with root_side / 2**d <= alpha * l_avg."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    target = alpha * l_avg
    d = 0
    while root_side / 2.0**d > target:
        d += 1
    return d


def bucket_points(points: np.ndarray, origin: np.ndarray, cell_size: float, level: int, indices=None) -> UniformLeafGrid:
    """Group points into cells ``floor((p - origin) / cell_size)``, clamped to the root cube."""
    if indices is None:
        indices = np.arange(len(points), dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    coords = np.floor((points[indices] - origin) / cell_size).astype(np.int64)
    coords = np.clip(coords, 0, (1 << level) - 1)
    keys = row_keys(coords, level)
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    starts = np.flatnonzero(np.r_[True, skeys[1:] != skeys[:-1]]) if len(skeys) else np.empty(0, np.int64)
    offsets = np.r_[starts, len(skeys)].astype(np.int64)
    return UniformLeafGrid(
        cell_size=cell_size,
        origin=np.asarray(origin, dtype=np.float64),
        level=level,
        cells=coords[order][starts],
        offsets=offsets,
        point_indices=indices[order],
    )


def uniformize(tree: Octree, cloud, alpha: float = 2.0) -> UniformLeafGrid:
    """Rebucket every point at the single cell size in (alpha*l_avg/2, alpha*l_avg]."""
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    level = grid_level(tree.root_side, mean_leaf_size(tree), alpha)
    cell_size = tree.root_side / 2.0**level
    return bucket_points(points, tree.cube.min_corner, cell_size, level)


def leaf_statistics(tree: Octree, alpha: float = 2.0) -> str:
    """Plain-text summary of leaf levels, the mean leaf size and the grid size."""
    l_avg = mean_leaf_size(tree)
    level = grid_level(tree.root_side, l_avg, alpha)
    lines = [
        f"root_side {tree.root_side:.9g}",
        f"leaves {tree.n_leaves} (non-empty {tree.n_occupied})",
        f"l_avg {l_avg:.9g}",
        f"l_P {tree.root_side / 2.0**level:.9g} (level {level}, alpha {alpha:g})",
        "level  leaves  non-empty",
    ]
    allh = tree.level_histogram()
    nonempty = tree.level_histogram(nonempty_only=True)
    for lv in sorted(allh):
        lines.append(f"{lv:5d}  {allh[lv]:6d}  {nonempty.get(lv, 0):9d}")
    return "\n".join(lines)


