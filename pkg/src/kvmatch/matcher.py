"""Two-phase subsequence matching over a KV-index.

Phase 1 probes the index once per query window, shifts each window's
interval set back to candidate start offsets and intersects them.  Phase 2
fetches the surviving candidates from the series and verifies them exactly.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .bounds import MeanRange, _envelope_of, window_range
from .core import CONSTRAINT_RTOL, QuerySpec, candidate_distances, window_stats
from .errors import QueryTooShort
from .intervals import IntervalSet, intersect, shift
from .kvindex import KVIndex

# outward padding applied to every probe range; covers rounding in the index means
RANGE_RTOL = 1e-9


class MatchResult(NamedTuple):
    offset: int
    distance: float


class PlannedWindow(NamedTuple):
    start: int          # 0-based offset of the window inside the query
    length: int
    index: KVIndex


@dataclass
class WindowProbe:
    start: int          # 1-based, as reported
    length: int
    lower: float
    upper: float
    estimate: int
    rows_scanned: int = 0
    is_intervals: int = 0
    is_positions: int = 0
    cs_intervals: int = 0
    cs_positions: int = 0
    scanned: bool = False


@dataclass
class QueryStats:
    windows: list[WindowProbe] = field(default_factory=list)
    cs_intervals: int = 0
    cs_positions: int = 0
    candidates_verified: int = 0
    lb_pruned: int = 0
    matches: int = 0
    fetches: int = 0
    values_fetched: int = 0
    probe_seconds: float = 0.0
    verify_seconds: float = 0.0

    @property
    def scans(self) -> int:
        return sum(1 for w in self.windows if w.scanned)

    @property
    def index_accesses(self) -> int:
        return sum(w.rows_scanned for w in self.windows)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["scans"] = self.scans
        out["index_accesses"] = self.index_accesses
        return out


def _relaxed(spec: QuerySpec) -> QuerySpec:
    """Spec with thresholds nudged outward so rounding can never cause a false dismissal."""
    cached = spec.__dict__.get("_relaxed")
    if cached is None:
        cached = spec.__dict__["_relaxed"] = _relax(spec)
    return cached


def _relax(spec: QuerySpec) -> QuerySpec:
    if spec.kind.normalized:
        mu_q = spec.query_stats.mean
        return QuerySpec(spec.query, spec.kind, spec.epsilon * (1 + 1e-9),
                         alpha=spec.alpha * (1 + 2 * CONSTRAINT_RTOL),
                         beta=spec.beta + 2 * CONSTRAINT_RTOL * (1 + abs(mu_q)), rho=spec.rho)
    return QuerySpec(spec.query, spec.kind, spec.epsilon * (1 + 1e-9), rho=spec.rho)


def probe_range(spec: QuerySpec, start: int, length: int) -> MeanRange:
    return window_range(_relaxed(spec), start, length).widened(RANGE_RTOL)


def equal_windows(idx: KVIndex, spec: QuerySpec) -> list[PlannedWindow]:
    if spec.m < idx.w:
        raise QueryTooShort(f"query length {spec.m} < index window {idx.w}")
    return [PlannedWindow(i * idx.w, idx.w, idx) for i in range(spec.m // idx.w)]


def probe_plan(plan: Sequence[PlannedWindow], spec: QuerySpec, n: int, *,
               order: str = "natural", max_windows: int | None = None,
               row_cache: bool = False, stats: QueryStats | None = None
               ) -> tuple[IntervalSet, QueryStats]:
    """Phase 1 for an arbitrary window plan (equal windows or a DP segmentation).

    ``order="estimate"`` processes windows by ascending meta-table n_I
    estimate; ``max_windows`` stops after that many windows.  Both only
    affect cost, never correctness.
    """
    stats = stats if stats is not None else QueryStats()
    t0 = time.perf_counter()
    if n < spec.m:
        raise QueryTooShort(f"series length {n} < query length {spec.m}")
    relaxed = _relaxed(spec)
    probes = []
    for win in plan:
        rng = window_range(relaxed, win.start, win.length).widened(RANGE_RTOL)
        probes.append(WindowProbe(win.start + 1, win.length, rng.lower, rng.upper,
                                  win.index.estimate_intervals(rng)))
    stats.windows = probes
    sequence = list(range(len(plan)))
    if order == "estimate":
        sequence.sort(key=lambda i: (probes[i].estimate, i))
    elif order != "natural":
        raise ValueError(f"unknown window order {order!r}")
    if max_windows is not None:
        sequence = sequence[:max(1, max_windows)]

    caches: dict[int, dict] = {}
    cs: IntervalSet | None = None
    for i in sequence:
        win, pr = plan[i], probes[i]
        cache = caches.setdefault(id(win.index), {}) if row_cache else None
        iset, rows = win.index.scan(MeanRange(pr.lower, pr.upper), cache=cache)
        pr.scanned = True
        pr.rows_scanned = rows
        pr.is_intervals, pr.is_positions = iset.n_intervals, iset.n_positions
        cs_i = shift(iset, win.start, n, spec.m)
        cs = cs_i if cs is None else intersect(cs, cs_i)
        pr.cs_intervals, pr.cs_positions = cs.n_intervals, cs.n_positions
        if not cs:
            break
    cs = cs if cs is not None else IntervalSet.empty()
    stats.cs_intervals, stats.cs_positions = cs.n_intervals, cs.n_positions
    stats.probe_seconds = time.perf_counter() - t0
    return cs, stats


def probe(idx: KVIndex, spec: QuerySpec, **opts) -> tuple[IntervalSet, QueryStats]:
    return probe_plan(equal_windows(idx, spec), spec, idx.n, **opts)


def _fetch_groups(cs: IntervalSet, m: int) -> list[tuple[int, int, np.ndarray, np.ndarray]]:
    """Group CS intervals whose data spans [l, r + m - 1] overlap into single fetches."""
    groups = []
    lo, hi = cs.lo, cs.hi
    k = 0
    while k < lo.size:
        j = k
        end = hi[k] + m - 1
        while j + 1 < lo.size and lo[j + 1] <= end:
            j += 1
            end = hi[j] + m - 1
        groups.append((int(lo[k]), int(end), lo[k:j + 1], hi[k:j + 1]))
        k = j + 1
    return groups


def _lb_paa_keep(seg: np.ndarray, rel: np.ndarray, spec: QuerySpec, w: int) -> np.ndarray:
    """LB_PAA test per candidate; True where the candidate may still match."""
    p = spec.m // w
    prefix = np.concatenate([[0.0], np.cumsum(seg)])
    starts = rel[:, None] + np.arange(p)[None, :] * w
    means = (prefix[starts + w] - prefix[starts]) / w
    env = _envelope_of(spec)
    lo_means = env.lower[: p * w].reshape(p, w).mean(axis=1)
    hi_means = env.upper[: p * w].reshape(p, w).mean(axis=1)
    if spec.kind.normalized:
        mu_q, sd_q = spec.query_stats
        lo_means = (lo_means - mu_q) / sd_q
        hi_means = (hi_means - mu_q) / sd_q
        mu, sd = window_stats(seg, rel, spec.m)
        safe_sd = np.where(sd > 0, sd, 1.0)
        means = (means - mu[:, None]) / safe_sd[:, None]
    gap = np.where(means > hi_means, means - hi_means, 0.0) + np.where(means < lo_means, lo_means - means, 0.0)
    lb = np.sqrt(w * (gap ** 2).sum(axis=1))
    return lb <= spec.epsilon * (1 + 1e-7) + 1e-9


def verify(x, cs: IntervalSet, spec: QuerySpec, *, lb_window: int | None = None,
           stats: QueryStats | None = None) -> list[MatchResult]:
    """Phase 2: exact distance check of every candidate start in `cs`.

    For DTW kinds, ``lb_window`` enables an LB_PAA pre-check with that
    window length before the banded DTW.
    """
    stats = stats if stats is not None else QueryStats()
    t0 = time.perf_counter()
    m = spec.m
    out_offsets, out_dist = [], []
    use_lb = spec.kind.uses_dtw and lb_window is not None and 1 <= lb_window <= m
    for first, last, lo, hi in _fetch_groups(cs, m):
        seg = np.asarray(x[first - 1:last], dtype=np.float64)
        stats.fetches += 1
        stats.values_fetched += seg.size
        rel = IntervalSet(lo - first, hi - first).positions()
        stats.candidates_verified += rel.size
        if use_lb:
            keep = _lb_paa_keep(seg, rel, spec, lb_window)
            stats.lb_pruned += int((~keep).sum())
            rel = rel[keep]
        if not rel.size:
            continue
        dist = candidate_distances(seg, rel, spec, abandon=True)
        hit = dist <= spec.epsilon
        out_offsets.append(rel[hit] + first)
        out_dist.append(dist[hit])
    stats.verify_seconds = time.perf_counter() - t0
    if not out_offsets:
        return []
    offsets = np.concatenate(out_offsets)
    dists = np.concatenate(out_dist)
    assert np.all(np.diff(offsets) > 0), "candidate offsets must be unique and ordered"
    stats.matches = int(offsets.size)
    return [MatchResult(int(o), float(d)) for o, d in zip(offsets, dists)]


def match(x, idx: KVIndex, spec: QuerySpec, *, lb: bool = True, **probe_opts
          ) -> tuple[list[MatchResult], QueryStats]:
    if len(x) != idx.n:
        raise ValueError(f"index was built for length {idx.n}, series has {len(x)}")
    cs, stats = probe(idx, spec, **probe_opts)
    results = verify(x, cs, spec, lb_window=idx.w if lb else None, stats=stats)
    return results, stats


__all__ = ["MatchResult", "QueryStats", "WindowProbe", "PlannedWindow", "probe", "probe_plan",
           "probe_range", "verify", "match", "shift", "intersect", "IntervalSet"]
