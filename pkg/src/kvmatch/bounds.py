"""Admissible window-mean ranges for the four query kinds, plus the DTW envelope and LB_PAA.

For a query window Q_i of length w, a subsequence S can only match when the
mean of its i-th window lies in the returned [lower, upper] range.  Ranges are
computed per window so variable-length windows (the DP planner) reuse the same
code with their own w.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .core import QuerySpec, as_series, window_means
from .errors import BandTooWide, LengthMismatch, ZeroVariance


class MeanRange(NamedTuple):
    lower: float
    upper: float

    def widened(self, rtol: float = 1e-9) -> "MeanRange":
        """Pad both ends outward by rtol * (1 + |end|) to absorb rounding."""
        return MeanRange(self.lower - rtol * (1 + abs(self.lower)),
                         self.upper + rtol * (1 + abs(self.upper)))


class Envelope(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray


def envelope(q, rho: int) -> Envelope:
    """Pointwise min / max of q over [i - rho, i + rho], clamped to the series."""
    q = as_series(q, "query")
    m = q.size
    if rho < 0 or rho >= m:
        raise BandTooWide(f"rho must lie in [0, {m - 1}], got {rho}")
    if rho == 0:
        return Envelope(q.copy(), q.copy())
    padded_lo = np.concatenate([np.full(rho, np.inf), q, np.full(rho, np.inf)])
    padded_hi = np.concatenate([np.full(rho, -np.inf), q, np.full(rho, -np.inf)])
    view_lo = np.lib.stride_tricks.sliding_window_view(padded_lo, 2 * rho + 1)
    view_hi = np.lib.stride_tricks.sliding_window_view(padded_hi, 2 * rho + 1)
    return Envelope(view_lo.min(axis=1), view_hi.max(axis=1))


def lb_paa(means_s: Sequence[float], env: Envelope, w: int) -> float:
    means_s = np.asarray(means_s, dtype=np.float64)
    mu_lo = window_means(env.lower, w)
    mu_hi = window_means(env.upper, w)
    if means_s.size != mu_lo.size:
        raise LengthMismatch(f"{means_s.size} window means for {mu_lo.size} envelope windows")
    above = np.where(means_s > mu_hi, means_s - mu_hi, 0.0)
    below = np.where(means_s < mu_lo, means_s - mu_lo, 0.0)
    return math.sqrt(float(np.sum(w * (above ** 2 + below ** 2))))


def _envelope_of(spec: QuerySpec) -> Envelope:
    # QuerySpec is frozen; stash the envelope in its instance dict like cached_property does
    env = spec.__dict__.get("_envelope")
    if env is None:
        env = envelope(spec.query, spec.rho)
        spec.__dict__["_envelope"] = env
    return env


def window_range(spec: QuerySpec, start: int, w: int) -> MeanRange:
    """Mean range for the query window covering 0-based positions [start, start + w)."""
    if w < 1 or start < 0 or start + w > spec.m:
        raise ValueError(f"window [{start}, {start + w}) outside query of length {spec.m}")
    radius = spec.epsilon / math.sqrt(w)
    if spec.kind.uses_dtw:
        env = _envelope_of(spec)
        lo_mean = float(np.mean(env.lower[start:start + w]))
        hi_mean = float(np.mean(env.upper[start:start + w]))
    else:
        lo_mean = hi_mean = float(np.mean(spec.query[start:start + w]))

    if not spec.kind.normalized:
        return MeanRange(lo_mean - radius, hi_mean + radius)

    mu_q, sd_q = spec.query_stats
    if sd_q == 0:
        raise ZeroVariance("cNSM query has zero variance")
    alpha, beta = spec.alpha, spec.beta
    a = lo_mean - mu_q - radius * sd_q
    b = hi_mean - mu_q + radius * sd_q
    lower = min(alpha * a, a / alpha) + mu_q - beta
    upper = max(alpha * b, b / alpha) + mu_q + beta
    return MeanRange(lower, upper)


def mean_ranges(spec: QuerySpec, w: int) -> list[MeanRange]:
    p = spec.m // w
    if w < 1 or p < 1:
        raise ValueError(f"query of length {spec.m} has no complete window of length {w}")
    return [window_range(spec, i * w, w) for i in range(p)]


__all__ = ["MeanRange", "Envelope", "envelope", "lb_paa", "window_range", "mean_ranges"]
