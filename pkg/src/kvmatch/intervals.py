"""Sorted, disjoint, non-adjacent window-interval sets and their set algebra."""
from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np
from numba import njit


class IntervalSet:
    """Closed 1-based integer intervals [l, r], ascending with r_k + 1 < l_{k+1}.

    Stored as two parallel int64 arrays.  The constructor trusts its input;
    use `from_pairs` or `union` to normalize arbitrary intervals.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = np.asarray(lo, dtype=np.int64)
        self.hi = np.asarray(hi, dtype=np.int64)

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(np.empty(0, np.int64), np.empty(0, np.int64))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "IntervalSet":
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if (arr[:, 0] > arr[:, 1]).any():
            raise ValueError("interval with l > r")
        return union([cls(arr[:, 0], arr[:, 1])])

    @classmethod
    def from_positions(cls, positions) -> "IntervalSet":
        pos = np.unique(np.asarray(positions, dtype=np.int64))
        if pos.size == 0:
            return cls.empty()
        breaks = np.flatnonzero(np.diff(pos) != 1)
        lo = np.concatenate([pos[:1], pos[breaks + 1]])
        hi = np.concatenate([pos[breaks], pos[-1:]])
        return cls(lo, hi)

    @property
    def n_intervals(self) -> int:
        return int(self.lo.size)

    @property
    def n_positions(self) -> int:
        return int((self.hi - self.lo + 1).sum())

    def __len__(self) -> int:
        return self.n_intervals

    def __bool__(self) -> bool:
        return self.lo.size > 0

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return zip(self.lo.tolist(), self.hi.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalSet):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self) -> str:
        shown = ", ".join(f"[{l}, {r}]" for l, r in list(self)[:6])
        more = ", ..." if self.lo.size > 6 else ""
        return f"IntervalSet({shown}{more})"

    def pairs(self) -> list[tuple[int, int]]:
        return list(self)

    def positions(self) -> np.ndarray:
        if not self:
            return np.empty(0, np.int64)
        sizes = self.hi - self.lo + 1
        offsets = np.repeat(self.lo - np.concatenate([[0], np.cumsum(sizes)[:-1]]), sizes)
        return offsets + np.arange(sizes.sum(), dtype=np.int64)

    def contains(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=np.int64)
        k = np.searchsorted(self.lo, positions, side="right") - 1
        ok = k >= 0
        ok[ok] = positions[ok] <= self.hi[k[ok]]
        return ok

    def is_valid(self) -> bool:
        if self.lo.size != self.hi.size or (self.lo > self.hi).any():
            return False
        return bool((self.lo[1:] > self.hi[:-1] + 1).all())


def union(sets: Iterable[IntervalSet]) -> IntervalSet:
    """Union of any interval collections, coalescing overlapping and adjacent runs."""
    sets = [s for s in sets if s.lo.size]
    if not sets:
        return IntervalSet.empty()
    lo = np.concatenate([s.lo for s in sets])
    hi = np.concatenate([s.hi for s in sets])
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    reach = np.maximum.accumulate(hi)
    starts = np.concatenate([[True], lo[1:] > reach[:-1] + 1])
    group = np.cumsum(starts) - 1
    out_lo = lo[starts]
    out_hi = np.zeros(out_lo.size, np.int64)
    np.maximum.at(out_hi, group, hi)
    return IntervalSet(out_lo, out_hi)


def shift(iset: IntervalSet, offset: int, n: int, m: int) -> IntervalSet:
    """Move every interval left by `offset`, clipped to the legal starts [1, n - m + 1]."""
    if offset < 0:
        raise ValueError("offset must be >= 0")
    last = n - m + 1
    lo = np.maximum(iset.lo - offset, 1)
    hi = np.minimum(iset.hi - offset, last)
    keep = lo <= hi
    return IntervalSet(lo[keep], hi[keep])


@njit(cache=True)
def _intersect(alo, ahi, blo, bhi):
    out_lo = np.empty(alo.size + blo.size, np.int64)
    out_hi = np.empty(alo.size + blo.size, np.int64)
    i = j = k = 0
    while i < alo.size and j < blo.size:
        lo = max(alo[i], blo[j])
        hi = min(ahi[i], bhi[j])
        if lo <= hi:
            out_lo[k] = lo
            out_hi[k] = hi
            k += 1
        if ahi[i] < bhi[j]:
            i += 1
        else:
            j += 1
    return out_lo[:k], out_hi[:k]


def intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    if not a or not b:
        return IntervalSet.empty()
    lo, hi = _intersect(a.lo, a.hi, b.lo, b.hi)
    return IntervalSet(lo, hi)
