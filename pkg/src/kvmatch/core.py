"""Series primitives: validation, z-normalization, ED / banded DTW and query specs.

Offsets exposed to callers are 1-based; arrays are plain float64 numpy arrays.
The batched kernels at the bottom are shared by the brute-force oracle and the
matcher's verification phase so both make bit-identical decisions.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import (
    BandTooWide,
    InvalidSeries,
    LengthMismatch,
    ZeroVariance,
)

# relative slack for the cNSM amplitude / offset constraints (float rounding only)
CONSTRAINT_RTOL = 1e-9


def as_series(values, name: str = "series") -> np.ndarray:
    """Return `values` as a validated 1-D float64 array (n >= 1, all finite)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidSeries(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidSeries(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise InvalidSeries(f"{name} contains NaN or Inf")
    return arr


class QueryKind(str, enum.Enum):
    RSM_ED = "rsm-ed"
    RSM_DTW = "rsm-dtw"
    CNSM_ED = "cnsm-ed"
    CNSM_DTW = "cnsm-dtw"

    @property
    def normalized(self) -> bool:
        return self in (QueryKind.CNSM_ED, QueryKind.CNSM_DTW)

    @property
    def uses_dtw(self) -> bool:
        return self in (QueryKind.RSM_DTW, QueryKind.CNSM_DTW)


class NormalizationStats(NamedTuple):
    mean: float
    std: float


def stats(s: np.ndarray) -> NormalizationStats:
    # population convention: divide by len(s).  Same kernel as the per-window
    # stats, so a subsequence identical to the query normalizes identically.
    s = np.ascontiguousarray(s, dtype=np.float64)
    mu, sd = _window_stats(s, np.zeros(1, np.int64), s.size)
    return NormalizationStats(float(mu[0]), float(sd[0]))


def znormalize(s) -> tuple[np.ndarray, NormalizationStats]:
    s = as_series(s)
    st = stats(s)
    if st.std == 0.0:
        raise ZeroVariance("cannot normalize a constant series")
    return (s - st.mean) / st.std, st


def _check_pair(s, t):
    s = as_series(s, "S")
    t = as_series(t, "T")
    if s.size != t.size:
        raise LengthMismatch(f"lengths differ: {s.size} != {t.size}")
    return s, t


def ed(s, t) -> float:
    s, t = _check_pair(s, t)
    return math.sqrt(_ed_sq(s, 0, t, math.inf))


def dtw(s, t, rho: int) -> float:
    """Sakoe-Chiba banded DTW: sqrt of the cheapest warping path's squared cost."""
    s, t = _check_pair(s, t)
    rho = int(rho)
    if rho < 0 or rho >= s.size:
        raise BandTooWide(f"rho must lie in [0, {s.size - 1}], got {rho}")
    return math.sqrt(_dtw_sq(s, t, rho, math.inf))


def window_means(s, w: int) -> np.ndarray:
    """Means of the floor(|s|/w) disjoint length-w windows; the tail is dropped."""
    s = np.asarray(s, dtype=np.float64)
    if w < 1 or s.size < w:
        raise ValueError(f"need 1 <= w <= |S|, got w={w}, |S|={s.size}")
    p = s.size // w
    return s[: p * w].reshape(p, w).mean(axis=1)


@dataclass(frozen=True, eq=False)
class QuerySpec:
    query: np.ndarray
    kind: QueryKind
    epsilon: float
    alpha: float | None = None
    beta: float | None = None
    rho: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "query", as_series(self.query, "query"))
        object.__setattr__(self, "kind", QueryKind(self.kind))
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.kind.normalized:
            if self.alpha is None or self.beta is None:
                raise ValueError("cNSM queries need both alpha and beta")
            if not self.alpha >= 1:
                raise ValueError(f"alpha must be >= 1, got {self.alpha}")
            if not self.beta >= 0:
                raise ValueError(f"beta must be >= 0, got {self.beta}")
            if self.query_stats.std == 0.0:
                raise ZeroVariance("cNSM query has zero variance")
        else:
            object.__setattr__(self, "alpha", None)
            object.__setattr__(self, "beta", None)
        if self.kind.uses_dtw:
            if self.rho is None:
                raise ValueError("DTW queries need rho")
            rho = int(self.rho)
            if rho < 0 or rho >= self.m:
                raise BandTooWide(f"rho must lie in [0, {self.m - 1}], got {rho}")
            object.__setattr__(self, "rho", rho)
        else:
            object.__setattr__(self, "rho", None)

    @property
    def m(self) -> int:
        return self.query.size

    @cached_property
    def query_stats(self) -> NormalizationStats:
        return stats(self.query)

    @cached_property
    def normalized_query(self) -> np.ndarray:
        mu, sd = self.query_stats
        return (self.query - mu) / sd


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True)
def _ed_sq(x, start, q, limit):
    acc = 0.0
    for k in range(q.size):
        d = x[start + k] - q[k]
        acc += d * d
        if acc > limit:
            return math.inf
    return acc


@njit(cache=True)
def _dtw_rows(s, t, rho, limit, prev, cur):
    # prev / cur hold one DP row indexed by j; only the band [i - rho, i + rho] is live
    m = s.size
    inf = math.inf
    hi = min(m - 1, rho)
    acc = 0.0
    s0 = s[0]
    for j in range(hi + 1):
        d = s0 - t[j]
        acc += d * d
        prev[j] = acc
    if hi + 1 < m:
        prev[hi + 1] = inf
    if prev[0] > limit:
        return inf
    for i in range(1, m):
        lo = i - rho if i > rho else 0
        hi = i + rho if i + rho < m else m - 1
        si = s[i]
        best = prev[lo]
        if lo > 0 and prev[lo - 1] < best:
            best = prev[lo - 1]
        d = si - t[lo]
        left = d * d + best
        cur[lo] = left
        row_min = left
        for j in range(lo + 1, hi + 1):
            best = prev[j]
            if prev[j - 1] < best:
                best = prev[j - 1]
            if left < best:
                best = left
            d = si - t[j]
            left = d * d + best
            cur[j] = left
            if left < row_min:
                row_min = left
        if hi + 1 < m:
            cur[hi + 1] = inf
        if row_min > limit:
            return inf
        prev, cur = cur, prev
    return prev[m - 1]


@njit(cache=True)
def _dtw_sq(s, t, rho, limit):
    return _dtw_rows(s, t, rho, limit, np.empty(s.size), np.empty(s.size))


_LANES = 16


@njit(cache=True)
def _dtw_lanes(series, q, rho, out):
    # series: (m, _LANES) candidate values; same arithmetic per lane as _dtw_rows
    m = q.size
    inf = math.inf
    prev = np.empty((m, _LANES))
    cur = np.empty((m, _LANES))
    hi = min(m - 1, rho)
    for b in range(_LANES):
        prev[0, b] = 0.0
    for j in range(hi + 1):
        for b in range(_LANES):
            d = series[0, b] - q[j]
            if j == 0:
                prev[j, b] = d * d
            else:
                prev[j, b] = prev[j - 1, b] + d * d
    if hi + 1 < m:
        for b in range(_LANES):
            prev[hi + 1, b] = inf
    for i in range(1, m):
        lo = i - rho if i > rho else 0
        hi = i + rho if i + rho < m else m - 1
        for b in range(_LANES):
            best = prev[lo, b]
            if lo > 0:
                best = min(best, prev[lo - 1, b])
            d = series[i, b] - q[lo]
            cur[lo, b] = d * d + best
        for j in range(lo + 1, hi + 1):
            qj = q[j]
            for b in range(_LANES):
                best = min(min(prev[j, b], prev[j - 1, b]), cur[j - 1, b])
                d = series[i, b] - qj
                cur[j, b] = d * d + best
        if hi + 1 < m:
            for b in range(_LANES):
                cur[hi + 1, b] = inf
        prev, cur = cur, prev
    for b in range(_LANES):
        out[b] = prev[m - 1, b]


@njit(cache=True)
def _dtw_all(x, starts, q, rho, mu, sd, normalize):
    """Full (never abandoned) banded DTW for many candidates, 16 at a time."""
    m = q.size
    n = starts.size
    out = np.empty(n)
    series = np.empty((m, _LANES))
    res = np.empty(_LANES)
    for c0 in range(0, n, _LANES):
        for b in range(_LANES):
            c = min(c0 + b, n - 1)
            st = starts[c]
            if normalize:
                for i in range(m):
                    series[i, b] = (x[st + i] - mu[c]) / sd[c]
            else:
                for i in range(m):
                    series[i, b] = x[st + i]
        _dtw_lanes(series, q, rho, res)
        for b in range(min(_LANES, n - c0)):
            out[c0 + b] = math.sqrt(res[b])
    return out


@njit(cache=True)
def _window_stats(x, starts, m):
    mu = np.empty(starts.size)
    sd = np.empty(starts.size)
    for c in range(starts.size):
        s = starts[c]
        acc = 0.0
        for k in range(m):
            acc += x[s + k]
        mean = acc / m
        var = 0.0
        for k in range(m):
            d = x[s + k] - mean
            var += d * d
        mu[c] = mean
        sd[c] = math.sqrt(var / m)
    return mu, sd


@njit(cache=True)
def _raw_distances(x, starts, q, rho, use_dtw, limit):
    out = np.empty(starts.size)
    m = q.size
    prev = np.empty(m)
    cur = np.empty(m)
    for c in range(starts.size):
        s = starts[c]
        if use_dtw:
            d2 = _dtw_rows(x[s:s + m], q, rho, limit, prev, cur)
        else:
            d2 = _ed_sq(x, s, q, limit)
        out[c] = math.sqrt(d2)
    return out


@njit(cache=True)
def _normalized_distances(x, starts, mu, sd, qhat, rho, use_dtw, limit):
    out = np.empty(starts.size)
    m = qhat.size
    buf = np.empty(m)
    prev = np.empty(m)
    cur = np.empty(m)
    for c in range(starts.size):
        s = starts[c]
        for k in range(m):
            buf[k] = (x[s + k] - mu[c]) / sd[c]
        if use_dtw:
            d2 = _dtw_rows(buf, qhat, rho, limit, prev, cur)
        else:
            d2 = _ed_sq(buf, 0, qhat, limit)
        out[c] = math.sqrt(d2)
    return out


def window_stats(x: np.ndarray, starts: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass mean / population std of x[s:s+m] for each 0-based start s."""
    return _window_stats(x, np.ascontiguousarray(starts, dtype=np.int64), m)


def constraint_mask(mu: np.ndarray, sd: np.ndarray, spec: QuerySpec) -> np.ndarray:
    """cNSM amplitude-scaling and offset-shifting test; constant windows never pass."""
    mu_q, sd_q = spec.query_stats
    ratio = sd / sd_q
    tol = CONSTRAINT_RTOL
    ok = (sd > 0) & (ratio >= (1.0 / spec.alpha) * (1 - tol)) & (ratio <= spec.alpha * (1 + tol))
    ok &= np.abs(mu - mu_q) <= spec.beta + tol * (1.0 + abs(mu_q))
    return ok


def abandon_limit(epsilon: float) -> float:
    # squared threshold with enough slack that abandoning never flips a <= epsilon decision
    return epsilon * epsilon * (1 + 1e-9) + 1e-300


def candidate_distances(x: np.ndarray, starts: np.ndarray, spec: QuerySpec,
                        abandon: bool = True) -> np.ndarray:
    """Distance of each candidate X(s+1, m) to the query under `spec`.

    Candidates excluded by the cNSM constraints (or early-abandoned when
    `abandon` is set) get +inf.  Non-abandoned values are identical whether or
    not abandoning is enabled.
    """
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    limit = abandon_limit(spec.epsilon) if abandon else math.inf
    rho = spec.rho or 0
    use_dtw = spec.kind.uses_dtw
    batch = use_dtw and not abandon
    if not spec.kind.normalized:
        if batch:
            dummy = np.empty(0)
            return _dtw_all(x, starts, spec.query, rho, dummy, dummy, False)
        return _raw_distances(x, starts, spec.query, rho, use_dtw, limit)
    out = np.full(starts.size, math.inf)
    mu, sd = window_stats(x, starts, spec.m)
    ok = constraint_mask(mu, sd, spec)
    if ok.any():
        if batch:
            out[ok] = _dtw_all(x, starts[ok], spec.normalized_query, rho, mu[ok], sd[ok], True)
        else:
            out[ok] = _normalized_distances(x, starts[ok], mu[ok], sd[ok],
                                            spec.normalized_query, rho, use_dtw, limit)
    return out
