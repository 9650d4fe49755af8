"""Query segmentation over a family of indexes with doubling window lengths.

The planner splits Q into windows whose lengths are w_u * 2^k and picks
the split minimizing the geometric mean of the per-window interval counts
read from the meta tables.  The minimization is a 2-D dynamic program over
(prefix length in units of w_u, number of windows), evaluated in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import QuerySpec
from .errors import QueryTooShort
from .kvindex import DEFAULT_D, DEFAULT_GAMMA, KVIndex, build
from .matcher import MatchResult, PlannedWindow, QueryStats, probe_plan, probe_range, verify

TIE_RTOL = 1e-12


@dataclass
class IndexFamily:
    base: int
    levels: int
    indexes: dict[int, KVIndex] = field(default_factory=dict)

    def __post_init__(self):
        missing = [w for w in self.lengths if w not in self.indexes]
        if missing:
            raise ValueError(f"family is missing indexes for window lengths {missing}")
        ns = {idx.n for idx in self.indexes.values()}
        if len(ns) != 1:
            raise ValueError("family indexes were built over series of different lengths")

    @property
    def lengths(self) -> list[int]:
        return [self.base * 2 ** i for i in range(self.levels)]

    @property
    def n(self) -> int:
        return next(iter(self.indexes.values())).n

    def __getitem__(self, w: int) -> KVIndex:
        return self.indexes[w]

    @classmethod
    def build(cls, x, base: int = 25, levels: int = 5, d: float = DEFAULT_D,
              gamma: float = DEFAULT_GAMMA) -> "IndexFamily":
        lengths = [base * 2 ** i for i in range(levels)]
        return cls(base, levels, {w: build(x, w, d, gamma) for w in lengths})

    @classmethod
    def open(cls, paths: Sequence) -> "IndexFamily":
        indexes = {}
        for p in paths:
            idx = KVIndex.open(Path(p))
            indexes[idx.w] = idx
        base = min(indexes)
        levels = len(indexes)
        return cls(base, levels, indexes)


@dataclass
class Segmentation:
    windows: list[tuple[int, int]]   # (1-based start in Q, length)
    score: float                     # geometric mean of the window costs (1/n dropped)

    @property
    def endpoints(self) -> list[int]:
        return [s + l - 1 for s, l in self.windows]


def objective(n_intervals: Sequence[int], n: int) -> float:
    """(1/n) * geometric mean of the interval counts; any zero count gives 0."""
    vals = np.asarray(n_intervals, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("need at least one window")
    if (vals < 0).any():
        raise ValueError("interval counts must be non-negative")
    if (vals == 0).any():
        return 0.0
    return math.exp(float(np.log(vals).mean())) / n


def from_unit_endpoints(endpoints: Sequence[int], base: int) -> list[tuple[int, int]]:
    """Map unit-grid endpoints (e.g. {2, 6, 7, 8}) to (start, length) windows of Q."""
    windows, prev = [], 0
    for e in endpoints:
        if e <= prev:
            raise ValueError("endpoints must be strictly increasing")
        windows.append((prev * base + 1, (e - prev) * base))
        prev = e
    return windows


def unit_sizes(levels: int) -> list[int]:
    return [2 ** k for k in range(levels)]


def segment_costs(cost: Callable[[int, int], float], units: int, levels: int
                  ) -> tuple[list[tuple[int, int]], float]:
    """Run the DP over the unit grid 1..units.

    ``cost(first_unit, size)`` gives the (floored, positive) interval-count
    estimate of the window covering units first_unit .. first_unit+size-1.
    Returns unit windows as (first_unit, size) and the minimal geometric-mean
    score.  Equal scores prefer more windows.
    """
    sizes = unit_sizes(levels)
    inf = math.inf
    # logv[i][j]: log of the best geometric mean for units 1..i split into j windows
    logv = np.full((units + 1, units + 1), inf)
    back = np.zeros((units + 1, units + 1), np.int64)
    logv[0, 0] = 0.0
    log_cost: dict[tuple[int, int], float] = {}
    for i in range(1, units + 1):
        for phi in sizes:
            if phi > i:
                break
            log_cost[(i - phi + 1, phi)] = math.log(cost(i - phi + 1, phi))
        for j in range(1, i + 1):
            best, arg = inf, 0
            for phi in sizes:
                if phi > i:
                    break
                prev = logv[i - phi, j - 1]
                if prev == inf:
                    continue
                cand = ((j - 1) * prev + log_cost[(i - phi + 1, phi)]) / j
                if cand < best - TIE_RTOL * max(1.0, abs(best)) or arg == 0:
                    best, arg = cand, phi
            logv[i, j] = best
            back[i, j] = arg
    finals = logv[units, 1:]
    best_score = finals.min()
    tol = TIE_RTOL * max(1.0, abs(best_score))
    j = int(np.flatnonzero(finals <= best_score + tol).max()) + 1
    windows = []
    i = units
    score = float(logv[units, j])
    while i > 0:
        phi = int(back[i, j])
        windows.append((i - phi + 1, phi))
        i -= phi
        j -= 1
    windows.reverse()
    return windows, math.exp(score)


def segment(spec: QuerySpec, family: IndexFamily, *, floor: float = 1.0) -> Segmentation:
    """Optimal segmentation of spec.query for the family under the meta-table cost model."""
    base = family.base
    units = spec.m // base
    if units < 1:
        raise QueryTooShort(f"query length {spec.m} < base window {base}")
    levels = min(family.levels, int(math.floor(math.log2(units))) + 1)

    def cost(first_unit: int, size: int) -> float:
        w = size * base
        rng = probe_range(spec, (first_unit - 1) * base, w)
        return max(float(family[w].estimate_intervals(rng)), floor)

    unit_windows, score = segment_costs(cost, units, levels)
    windows = [((u - 1) * base + 1, size * base) for u, size in unit_windows]
    return Segmentation(windows, score)


def match_dp(x, family: IndexFamily, spec: QuerySpec, *, lb: bool = True, floor: float = 1.0,
             **probe_opts) -> tuple[list[MatchResult], QueryStats, Segmentation]:
    if len(x) != family.n:
        raise ValueError(f"indexes were built for length {family.n}, series has {len(x)}")
    seg = segment(spec, family, floor=floor)
    plan = [PlannedWindow(start - 1, length, family[length]) for start, length in seg.windows]
    cs, stats = probe_plan(plan, spec, family.n, **probe_opts)
    lb_window = family.base if lb else None
    results = verify(x, cs, spec, lb_window=lb_window, stats=stats)
    return results, stats, seg
