"""Ground-truth oracle, synthetic series generator and small fixture helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import QuerySpec, as_series, candidate_distances
from .errors import TooLarge
from .matcher import MatchResult

SEGMENT_TYPES = ("random_walk", "gaussian", "mixed_sine")


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    seed: int = 0
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    segment_length: tuple[int, int] = (100, 1000)
    walk_start: tuple[float, float] = (-5.0, 5.0)
    walk_step: tuple[float, float] = (-1.0, 1.0)
    gauss_mean: tuple[float, float] = (-5.0, 5.0)
    gauss_std: tuple[float, float] = (0.0, 2.0)
    sine_period: tuple[float, float] = (2.0, 10.0)
    sine_amplitude: tuple[float, float] = (2.0, 10.0)
    sine_mean: tuple[float, float] = (-5.0, 5.0)
    sine_components: tuple[int, int] = (1, 3)


def rng_for(seed: int) -> np.random.Generator:
    """PCG64 seeded through SeedSequence: reproducible across platforms."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _segment(kind: str, length: int, cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    if kind == "random_walk":
        start = rng.uniform(*cfg.walk_start)
        steps = rng.uniform(*cfg.walk_step, size=length - 1)
        return start + np.concatenate([[0.0], np.cumsum(steps)])
    if kind == "gaussian":
        return rng.normal(rng.uniform(*cfg.gauss_mean), rng.uniform(*cfg.gauss_std), size=length)
    t = np.arange(length, dtype=np.float64)
    out = np.full(length, rng.uniform(*cfg.sine_mean))
    for _ in range(int(rng.integers(cfg.sine_components[0], cfg.sine_components[1] + 1))):
        period = rng.uniform(*cfg.sine_period)
        amp = rng.uniform(*cfg.sine_amplitude)
        phase = rng.uniform(0, 2 * math.pi)
        out += amp * np.sin(2 * math.pi * t / period + phase)
    return out


def generate(cfg: GeneratorConfig) -> np.ndarray:
    """Concatenate random-walk / Gaussian / mixed-sine segments up to cfg.n values."""
    if cfg.n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_for(cfg.seed)
    p = np.asarray(cfg.weights, dtype=np.float64)
    p = p / p.sum()
    out = np.empty(cfg.n)
    filled = 0
    while filled < cfg.n:
        kind = SEGMENT_TYPES[int(rng.choice(3, p=p))]
        length = int(rng.integers(cfg.segment_length[0], cfg.segment_length[1] + 1))
        length = min(length, cfg.n - filled)
        out[filled:filled + length] = _segment(kind, length, cfg, rng)
        filled += length
    return out


def oracle_distances(x, spec: QuerySpec) -> np.ndarray:
    """Distance of every subsequence X(j, |Q|), j = 1..n-|Q|+1 (index j-1).

    cNSM subsequences failing the amplitude / offset constraints get +inf.
    Every offset is evaluated in full; nothing is pruned.
    """
    x = as_series(x, "X")
    if x.size < spec.m:
        return np.empty(0)
    starts = np.arange(x.size - spec.m + 1, dtype=np.int64)
    return candidate_distances(x, starts, spec, abandon=False)


def oracle_match(x, spec: QuerySpec) -> list[MatchResult]:
    dist = oracle_distances(x, spec)
    hits = np.flatnonzero(dist <= spec.epsilon)
    return [MatchResult(int(j) + 1, float(dist[j])) for j in hits]


def calibrate_epsilon(distances: np.ndarray, count: int) -> float:
    """Threshold admitting (about) the `count` closest subsequences.

    Chosen halfway between the count-th and next distance so no subsequence
    sits on the boundary.
    """
    finite = np.sort(distances[np.isfinite(distances)])
    if finite.size == 0:
        return 0.0
    count = max(1, min(count, finite.size))
    if count == finite.size:
        return float(finite[-1]) * 1.001 + 1e-9
    return float(0.5 * (finite[count - 1] + finite[count]))


def enumerate_segmentations(units: int, levels: int, limit: int = 16) -> list[list[tuple[int, int]]]:
    """Every tiling of units 1..units by windows of 1, 2, 4, ... 2^(levels-1) units.

    Windows are (first_unit, size) pairs.
    """
    if units > limit:
        raise TooLarge(f"refusing to enumerate segmentations of {units} > {limit} units")
    sizes = [2 ** k for k in range(levels)]
    out: list[list[tuple[int, int]]] = []

    def walk(pos: int, acc: list[tuple[int, int]]):
        if pos == units:
            out.append(list(acc))
            return
        for s in sizes:
            if pos + s <= units:
                acc.append((pos + 1, s))
                walk(pos + s, acc)
                acc.pop()

    walk(0, [])
    return out


def plant(x: np.ndarray, pattern: np.ndarray, offset: int) -> np.ndarray:
    """Copy of x with `pattern` written at 1-based `offset`."""
    out = np.array(x, dtype=np.float64, copy=True)
    out[offset - 1: offset - 1 + pattern.size] = pattern
    return out
