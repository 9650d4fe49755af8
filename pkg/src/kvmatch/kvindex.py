"""KV-index: rows keyed by sliding-window mean ranges, valued by window intervals.

File layout (little-endian)::

    header  "KVMI" | version u32 | w u32 | n u64
    rows    low f64 | up f64 | count u64 | count x (l i64, r i64)
    footer  count x (low f64, up f64, pos u64, n_I u64, n_P u64)
            meta_start u64 | meta_count u64 | "KVMI"
"""
from __future__ import annotations

import io
import logging
import mmap
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .bounds import MeanRange
from .errors import CorruptIndex, SeriesTooShort
from .intervals import IntervalSet

log = logging.getLogger(__name__)

MAGIC = b"KVMI"
VERSION = 1
HEADER = struct.Struct("<4sIIQ")
ROW_HEAD = struct.Struct("<ddQ")
META_DTYPE = np.dtype([("low", "<f8"), ("up", "<f8"), ("pos", "<u8"),
                       ("n_I", "<u8"), ("n_P", "<u8")])
TRAILER = struct.Struct("<QQ4s")

DEFAULT_D = 0.5
DEFAULT_GAMMA = 0.8

# windows per block for the local prefix sums; bounds cumulative rounding in the means
_MEAN_BLOCK = 4096


@dataclass(frozen=True)
class IndexRow:
    low: float
    up: float
    intervals: IntervalSet

    @property
    def n_intervals(self) -> int:
        return self.intervals.n_intervals

    @property
    def n_positions(self) -> int:
        return self.intervals.n_positions


@dataclass(frozen=True)
class MetaEntry:
    low: float
    up: float
    pos: int
    n_intervals: int
    n_positions: int


class KVIndex:
    """Immutable KV-index over one series for one window length.

    Row data lives either in memory (CSR arrays) or in a memory-mapped index
    file; the meta table is always in memory.
    """

    def __init__(self, w: int, n: int, meta: np.ndarray, row_ptr=None, ivl_lo=None,
                 ivl_hi=None, mapped=None):
        self.w = int(w)
        self.n = int(n)
        self.meta = meta
        self._row_ptr = row_ptr
        self._lo = ivl_lo
        self._hi = ivl_hi
        self._mapped = mapped
        self.path: Path | None = None

    # -- meta ----------------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return int(self.meta.size)

    @property
    def lows(self) -> np.ndarray:
        return self.meta["low"]

    @property
    def ups(self) -> np.ndarray:
        return self.meta["up"]

    @property
    def total_intervals(self) -> int:
        return int(self.meta["n_I"].sum())

    @property
    def total_positions(self) -> int:
        return int(self.meta["n_P"].sum())

    def meta_entries(self) -> list[MetaEntry]:
        return [MetaEntry(float(e["low"]), float(e["up"]), int(e["pos"]), int(e["n_I"]),
                          int(e["n_P"])) for e in self.meta]

    def file_size(self) -> int:
        return (int(self.meta["pos"][-1]) + ROW_HEAD.size + 16 * int(self.meta["n_I"][-1])
                + META_DTYPE.itemsize * self.n_rows + TRAILER.size) if self.n_rows else \
            HEADER.size + TRAILER.size

    # -- rows ----------------------------------------------------------------
    def row_arrays(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if self._mapped is None:
            a, b = self._row_ptr[i], self._row_ptr[i + 1]
            return self._lo[a:b], self._hi[a:b]
        pos = int(self.meta["pos"][i])
        count = int(self.meta["n_I"][i])
        low, up, stored = ROW_HEAD.unpack_from(self._mapped, pos)
        if stored != count or low != self.meta["low"][i] or up != self.meta["up"][i]:
            raise CorruptIndex(f"row {i} header disagrees with meta table")
        pairs = np.frombuffer(self._mapped, dtype="<i8", count=2 * count,
                              offset=pos + ROW_HEAD.size).reshape(count, 2)
        return pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)

    def row(self, i: int) -> IndexRow:
        lo, hi = self.row_arrays(i)
        return IndexRow(float(self.meta["low"][i]), float(self.meta["up"][i]), IntervalSet(lo, hi))

    @property
    def rows(self) -> list[IndexRow]:
        return [self.row(i) for i in range(self.n_rows)]

    def __iter__(self) -> Iterator[IndexRow]:
        return (self.row(i) for i in range(self.n_rows))

    def to_memory(self) -> "KVIndex":
        if self._mapped is None:
            return self
        los, his = zip(*(self.row_arrays(i) for i in range(self.n_rows))) if self.n_rows else ((), ())
        ptr = np.concatenate([[0], np.cumsum(self.meta["n_I"].astype(np.int64))])
        cat = (lambda parts: np.concatenate(parts) if parts else np.empty(0, np.int64))
        return KVIndex(self.w, self.n, self.meta.copy(), ptr, cat(los), cat(his))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KVIndex):
            return NotImplemented
        if (self.w, self.n) != (other.w, other.n) or not np.array_equal(self.meta, other.meta):
            return False
        return all(self.row(i).intervals == other.row(i).intervals for i in range(self.n_rows))

    def close(self):
        if isinstance(self._mapped, mmap.mmap):
            self._mapped.close()
        self._mapped = None

    # -- range access --------------------------------------------------------
    def row_span(self, rng: MeanRange) -> tuple[int, int]:
        """Rows [s, e) whose key [low, up) meets the closed range [lower, upper]."""
        s = int(np.searchsorted(self.meta["up"], rng.lower, side="right"))
        e = int(np.searchsorted(self.meta["low"], rng.upper, side="right"))
        return s, max(s, e)

    def scan(self, rng: MeanRange, cache: dict | None = None) -> tuple[IntervalSet, int]:
        """One contiguous scan over the rows meeting `rng`.

        Returns the coalesced union of their window intervals and the number of
        rows touched.  Boundary rows may add windows whose mean lies outside
        the range; they never drop one inside it.
        """
        if rng.lower > rng.upper:
            raise ValueError(f"empty mean range {rng}")
        s, e = self.row_span(rng)
        if s == e:
            return IntervalSet.empty(), 0
        if self._mapped is None and cache is None:
            a, b = self._row_ptr[s], self._row_ptr[e]
            lo, hi = self._lo[a:b], self._hi[a:b]
        else:
            los, his = [], []
            for i in range(s, e):
                if cache is not None and i in cache:
                    r_lo, r_hi = cache[i]
                else:
                    r_lo, r_hi = self.row_arrays(i)
                    if cache is not None:
                        cache[i] = (r_lo, r_hi)
                los.append(r_lo)
                his.append(r_hi)
            lo, hi = np.concatenate(los), np.concatenate(his)
        return _coalesce_disjoint(lo, hi), e - s

    def estimate_intervals(self, rng: MeanRange) -> int:
        """Sum of n_I over the meta entries meeting `rng` (no row data touched)."""
        s, e = self.row_span(rng)
        return int(self.meta["n_I"][s:e].sum())

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        with open(path, "wb") as fh:
            serialize(self, fh)

    @classmethod
    def open(cls, path) -> "KVIndex":
        """Memory-map an index file; only header and meta table are parsed."""
        fh = open(path, "rb")
        try:
            size = os.fstat(fh.fileno()).st_size
            if size < HEADER.size + TRAILER.size:
                raise CorruptIndex(f"{path}: file too small ({size} bytes)")
            mapped = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
        finally:
            fh.close()
        try:
            idx = _parse(mapped, size, lazy=True)
        except Exception:
            mapped.close()
            raise
        idx.path = Path(path)
        return idx


def scan(idx: KVIndex, rng: MeanRange) -> tuple[IntervalSet, int]:
    return idx.scan(rng)


def estimate_intervals(idx: KVIndex, rng: MeanRange) -> int:
    return idx.estimate_intervals(rng)


def _coalesce_disjoint(lo: np.ndarray, hi: np.ndarray) -> IntervalSet:
    """Sort position-disjoint intervals and join the ones that touch."""
    if lo.size == 0:
        return IntervalSet.empty()
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    starts = np.empty(lo.size, bool)
    starts[0] = True
    np.not_equal(lo[1:], hi[:-1] + 1, out=starts[1:])
    ends = np.empty(lo.size, bool)
    ends[-1] = True
    ends[:-1] = starts[1:]
    return IntervalSet(lo[starts], hi[ends])


# ---------------------------------------------------------------------------
# building

def sliding_means(x: np.ndarray, w: int, first: int = 0, count: int | None = None) -> np.ndarray:
    """Means of the length-w windows starting at 0-based first .. first+count-1.

    Rolling sums come from prefix sums restarted every few thousand windows,
    which keeps the rounding error independent of the series length.
    """
    total = x.size - w + 1
    if count is None:
        count = total - first
    out = np.empty(count)
    for b in range(0, count, _MEAN_BLOCK):
        k = min(_MEAN_BLOCK, count - b)
        seg = np.asarray(x[first + b: first + b + k + w - 1], dtype=np.float64)
        prefix = np.empty(seg.size + 1)
        prefix[0] = 0.0
        np.cumsum(seg, out=prefix[1:])
        out[b:b + k] = (prefix[w:w + k] - prefix[:k]) / w
    return out


def _row_keys(means: np.ndarray, d: float) -> np.ndarray:
    keys = np.floor(means / d).astype(np.int64)
    # division can round across a bucket edge; make k*d <= mean < (k+1)*d hold exactly
    keys -= means < keys * d
    keys += means >= (keys + 1) * d
    return keys


def _runs(keys: np.ndarray, offset: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    change = np.flatnonzero(keys[1:] != keys[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change - 1, [keys.size - 1]])
    return keys[starts], starts + offset + 1, ends + offset + 1


class _RunSink:
    """Collects (key, l, r) runs from pass 1, optionally spilled to a temp file."""

    def __init__(self, spill: bool):
        self.spill = tempfile.TemporaryFile() if spill else None
        self.parts: list[np.ndarray] = []
        self.pending: np.ndarray | None = None

    def add(self, key, lo, hi):
        block = np.stack([key, lo, hi], axis=1)
        if self.pending is not None:
            last = self.pending
            if last[0] == block[0, 0] and last[2] + 1 == block[0, 1]:
                block[0, 1] = last[1]
            else:
                self._emit(last[None, :])
        self._emit(block[:-1])
        self.pending = block[-1].copy()

    def _emit(self, block):
        if not block.size:
            return
        if self.spill is not None:
            self.spill.write(np.ascontiguousarray(block, dtype="<i8").tobytes())
        else:
            self.parts.append(block)

    def finish(self) -> np.ndarray:
        if self.pending is not None:
            self._emit(self.pending[None, :])
            self.pending = None
        if self.spill is not None:
            self.spill.seek(0)
            data = np.frombuffer(self.spill.read(), dtype="<i8").astype(np.int64).reshape(-1, 3)
            self.spill.close()
            return data
        return np.concatenate(self.parts) if self.parts else np.empty((0, 3), np.int64)


def build(x, w: int, d: float = DEFAULT_D, gamma: float = DEFAULT_GAMMA, *,
          cascade: bool = False, chunk: int = 1 << 20, spill: bool = False) -> KVIndex:
    """Build the index for window length w over series x (array or memmap).

    Pass 1 streams the series in chunks, assigning window j to row
    floor(mean_j / d) and extending runs of consecutive windows that share a
    row.  Pass 2 greedily merges neighbouring rows left to right while
    n_I(union) / (n_I(a) + n_I(b)) < gamma.  A merged row is closed after one
    merge unless ``cascade`` is set, in which case it is re-tested against its
    next neighbour.  With ``spill`` the pass-1 runs go through a temporary
    file instead of memory.
    """
    n = int(len(x))
    if w < 1 or n < w:
        raise SeriesTooShort(f"series of length {n} is shorter than window {w}")
    if not d > 0:
        raise ValueError(f"d must be > 0, got {d}")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    total = n - w + 1
    sink = _RunSink(spill)
    for first in range(0, total, chunk):
        count = min(chunk, total - first)
        means = sliding_means(x, w, first, count)
        if not np.isfinite(means).all():
            raise ValueError("series contains non-finite values")
        sink.add(*_runs(_row_keys(means, d), first))
    runs = sink.finish()
    return _assemble(runs, w, n, d, gamma, cascade)


def fixed_rows(runs_key: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys, row_of_run = np.unique(runs_key, return_inverse=True)
    return keys, row_of_run


def merge_groups(row_of_run: np.ndarray, n_rows: int, gamma: float,
                 cascade: bool = False) -> np.ndarray:
    """Greedy left-to-right merge; returns the group id of every fixed row.

    Without ``cascade`` a merged pair is closed and the scan resumes at the
    following row; with it the merged row is re-tested against its next
    neighbour.

    Two intervals can only touch where consecutive runs change row, so
    n_I of a union equals the run count minus the run-boundary edges that
    fall inside it.
    """
    runs_per_row = np.bincount(row_of_run, minlength=n_rows)
    a, b = row_of_run[:-1], row_of_run[1:]
    edge_lo, edge_hi = np.minimum(a, b), np.maximum(a, b)
    order = np.lexsort((edge_lo, edge_hi))
    edge_lo, edge_hi = edge_lo[order], edge_hi[order]
    edge_start = np.searchsorted(edge_hi, np.arange(n_rows + 1))

    group = np.empty(n_rows, np.int64)
    gid, first, cur_n = 0, 0, int(runs_per_row[0]) if n_rows else 0
    fresh = True
    if n_rows:
        group[0] = 0
    for v in range(1, n_rows):
        nxt_n = int(runs_per_row[v])
        lo_edges = edge_lo[edge_start[v]:edge_start[v + 1]]
        touching = lo_edges.size - int(np.searchsorted(lo_edges, first, side="left"))
        merged = cur_n + nxt_n - touching
        if fresh and merged / (cur_n + nxt_n) < gamma:
            cur_n = merged
            fresh = cascade
        else:
            fresh = True
            gid += 1
            first = v
            cur_n = nxt_n
        group[v] = gid
    return group


def _assemble(runs: np.ndarray, w: int, n: int, d: float, gamma: float, cascade: bool) -> KVIndex:
    keys, row_of_run = fixed_rows(runs[:, 0])
    group = merge_groups(row_of_run, keys.size, gamma, cascade)
    n_groups = int(group[-1]) + 1
    g_of_run = group[row_of_run]

    # runs are in position order: a stable sort by group keeps each group's intervals sorted
    order = np.argsort(g_of_run, kind="stable")
    g, lo, hi = g_of_run[order], runs[order, 1], runs[order, 2]
    starts = np.ones(g.size, bool)
    starts[1:] = (g[1:] != g[:-1]) | (lo[1:] != hi[:-1] + 1)
    ends = np.ones(g.size, bool)
    ends[:-1] = starts[1:]
    ivl_g, ivl_lo, ivl_hi = g[starts], lo[starts], hi[ends]

    n_I = np.bincount(ivl_g, minlength=n_groups)
    n_P = np.bincount(ivl_g, weights=(ivl_hi - ivl_lo + 1), minlength=n_groups).astype(np.int64)
    first_row = np.searchsorted(group, np.arange(n_groups), side="left")
    last_row = np.searchsorted(group, np.arange(n_groups), side="right") - 1

    meta = np.zeros(n_groups, META_DTYPE)
    meta["low"] = keys[first_row] * d
    meta["up"] = (keys[last_row] + 1) * d
    sizes = ROW_HEAD.size + 16 * n_I
    meta["pos"] = HEADER.size + np.concatenate([[0], np.cumsum(sizes)[:-1]])
    meta["n_I"] = n_I
    meta["n_P"] = n_P
    row_ptr = np.concatenate([[0], np.cumsum(n_I)]).astype(np.int64)
    idx = KVIndex(w, n, meta, row_ptr, ivl_lo.astype(np.int64), ivl_hi.astype(np.int64))
    log.debug("built index w=%d: %d fixed rows -> %d rows, %d intervals",
              w, keys.size, n_groups, int(n_I.sum()))
    return idx


# ---------------------------------------------------------------------------
# serialization

def serialize(idx: KVIndex, sink: BinaryIO) -> None:
    sink.write(HEADER.pack(MAGIC, VERSION, idx.w, idx.n))
    written = HEADER.size
    for i in range(idx.n_rows):
        e = idx.meta[i]
        if written != int(e["pos"]):
            raise ValueError(f"meta offset for row {i} is {int(e['pos'])}, expected {written}")
        lo, hi = idx.row_arrays(i)
        pairs = np.empty((lo.size, 2), "<i8")
        pairs[:, 0] = lo
        pairs[:, 1] = hi
        sink.write(ROW_HEAD.pack(float(e["low"]), float(e["up"]), lo.size))
        sink.write(pairs.tobytes())
        written += ROW_HEAD.size + pairs.nbytes
    sink.write(np.ascontiguousarray(idx.meta, META_DTYPE).tobytes())
    sink.write(TRAILER.pack(written, idx.n_rows, MAGIC))


def deserialize(source: BinaryIO | bytes) -> KVIndex:
    """Read a whole index into memory, validating every row against the meta table."""
    data = source if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    return _parse(data, len(data), lazy=False)


def _parse(buf, size: int, lazy: bool) -> KVIndex:
    if size < HEADER.size + TRAILER.size:
        raise CorruptIndex(f"index too small ({size} bytes)")
    magic, version, w, n = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CorruptIndex(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptIndex(f"unsupported index version {version}")
    meta_start, count, tail = TRAILER.unpack_from(buf, size - TRAILER.size)
    if tail != MAGIC:
        raise CorruptIndex("bad trailing magic (truncated file?)")
    if meta_start < HEADER.size or meta_start + count * META_DTYPE.itemsize + TRAILER.size != size:
        raise CorruptIndex("meta table location inconsistent with file size")
    meta = np.frombuffer(buf, dtype=META_DTYPE, count=count, offset=meta_start).copy()
    if count:
        pos = meta["pos"].astype(np.int64)
        ends = pos + ROW_HEAD.size + 16 * meta["n_I"].astype(np.int64)
        if pos[0] != HEADER.size or (pos[1:] != ends[:-1]).any() or ends[-1] != meta_start:
            raise CorruptIndex("row offsets in meta table are not contiguous")
        if (meta["low"] >= meta["up"]).any() or (meta["up"][:-1] > meta["low"][1:]).any():
            raise CorruptIndex("row keys are not sorted and disjoint")
    elif meta_start != HEADER.size:
        raise CorruptIndex("empty meta table but non-empty body")
    if int(meta["n_P"].sum()) != n - w + 1:
        raise CorruptIndex("meta n_P total does not cover every sliding window")
    idx = KVIndex(w, n, meta, mapped=buf)
    if lazy:
        return idx
    mem = idx.to_memory()
    counts = np.diff(mem._row_ptr)
    for i in range(mem.n_rows):
        a, b = mem._row_ptr[i], mem._row_ptr[i + 1]
        if int((mem._hi[a:b] - mem._lo[a:b] + 1).sum()) != int(meta["n_P"][i]) or counts[i] != meta["n_I"][i]:
            raise CorruptIndex(f"row {i} disagrees with its meta entry")
    return mem


def dumps(idx: KVIndex) -> bytes:
    buf = io.BytesIO()
    serialize(idx, buf)
    return buf.getvalue()
