"""Subsequence matching over a mean-value key-value index (KV-index)."""
from .bounds import Envelope, MeanRange, envelope, lb_paa, mean_ranges, window_range
from .core import (
    NormalizationStats,
    QueryKind,
    QuerySpec,
    dtw,
    ed,
    window_means,
    znormalize,
)
from .errors import (
    BandTooWide,
    CorruptIndex,
    KVMatchError,
    LengthMismatch,
    QueryTooShort,
    SeriesTooShort,
    TooLarge,
    ZeroVariance,
)
from .intervals import IntervalSet, intersect, shift, union
from .kvindex import KVIndex, build, deserialize, serialize
from .matcher import MatchResult, QueryStats, match, probe, verify
from .segmenter import IndexFamily, Segmentation, match_dp, objective, segment

__version__ = "0.1.0"
