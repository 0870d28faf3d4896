"""Integer cell-coordinate helpers shared by the grid-based stages."""

from __future__ import annotations

import itertools

import numpy as np

_PACK_BITS = 21
_PACK_LIMIT = 1 << _PACK_BITS

NEIGHBOR_OFFSETS_26 = np.array(
    [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)], dtype=np.int64
)


def block_offsets(radius: int) -> np.ndarray:
    """All offsets of the (2r+1)^3 block centred on the origin, origin included."""
    rng = range(-radius, radius + 1)
    return np.array(list(itertools.product(rng, rng, rng)), dtype=np.int64)


def pack(coords: np.ndarray) -> np.ndarray:
    """Pack non-negative coordinates below 2**21 into one int64 (x-major order)."""
    c = coords.astype(np.int64, copy=False)
    return (c[:, 0] << (2 * _PACK_BITS)) | (c[:, 1] << _PACK_BITS) | c[:, 2]


def row_keys(coords: np.ndarray, level: int) -> np.ndarray:
    """Sortable 1-D keys for rows of cell coordinates at ``level``.

    Lexicographic (x, y, z) order is preserved in both encodings.
    """
    if level <= _PACK_BITS:
        return pack(coords)
    big = np.ascontiguousarray(coords, dtype=">i8")
    return big.view(np.dtype((np.void, 24))).ravel()


class CellIndex:
    """Lookup from integer cell coordinates to row positions in ``coords``."""

    def __init__(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        self.size = len(coords)
        self._dict = None
        if self.size == 0:
            self._lo = np.zeros(3, dtype=np.int64)
            self._sorted = np.empty(0, dtype=np.int64)
            self._order = np.empty(0, dtype=np.int64)
            return
        self._lo = coords.min(axis=0) - 4
        span = coords.max(axis=0) - self._lo + 5
        if span.max() < _PACK_LIMIT:
            keys = pack(coords - self._lo)
            self._order = np.argsort(keys, kind="stable")
            self._sorted = keys[self._order]
        else:
            self._dict = {tuple(map(int, c)): i for i, c in enumerate(coords)}

    def find(self, query: np.ndarray) -> np.ndarray:
        """Row index of every query cell, or -1 when the cell is absent."""
        query = np.asarray(query, dtype=np.int64).reshape(-1, 3)
        out = np.full(len(query), -1, dtype=np.int64)
        if self.size == 0 or len(query) == 0:
            return out
        if self._dict is not None:
            get = self._dict.get
            for n, c in enumerate(query.tolist()):
                out[n] = get(tuple(c), -1)
            return out
        rel = query - self._lo
        ok = np.all((rel >= 0) & (rel < _PACK_LIMIT), axis=1)
        keys = pack(rel[ok])
        pos = np.searchsorted(self._sorted, keys)
        pos = np.minimum(pos, len(self._sorted) - 1)
        hit = self._sorted[pos] == keys
        found = np.where(hit, self._order[pos], -1)
        out[ok] = found
        return out

    def neighbor_pairs(self, coords: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(i, j) pairs with ``coords[i] + offset`` present as row ``j`` for some offset."""
        coords = np.asarray(coords, dtype=np.int64)
        src, dst = [], []
        base = np.arange(len(coords), dtype=np.int64)
        for off in offsets:
            j = self.find(coords + off)
            hit = j >= 0
            src.append(base[hit])
            dst.append(j[hit])
        if not src:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(src), np.concatenate(dst)
