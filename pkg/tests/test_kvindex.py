import io
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvmatch.bounds import MeanRange
from kvmatch.errors import CorruptIndex, SeriesTooShort
from kvmatch.kvindex import (
    HEADER,
    KVIndex,
    build,
    deserialize,
    dumps,
    estimate_intervals,
    merge_groups,
    scan,
    serialize,
    sliding_means,
)
from kvmatch.testkit import GeneratorConfig, generate


def spike_series(n=2000, a=43.75):
    """Windows 1000-1002 (w=50) are the only ones with mean in [1.5, 2.0)."""
    x = np.zeros(n)
    x[1002 - 1] = x[1049 - 1] = a
    return x


def naive_means(x, w):
    return np.array([x[j:j + w].mean() for j in range(x.size - w + 1)])


@pytest.fixture(scope="module")
def series():
    return generate(GeneratorConfig(10_000, seed=11))


@pytest.fixture(scope="module")
def index(series):
    return build(series, 50)


def check_structure(idx, x):
    lows, ups = idx.lows, idx.ups
    assert (lows < ups).all() and (ups[:-1] <= lows[1:]).all()
    means = naive_means(np.asarray(x), idx.w)
    seen = np.zeros(idx.n - idx.w + 1, int)
    for row in idx:
        assert row.intervals.is_valid()
        pos = row.intervals.positions()
        seen[pos - 1] += 1
        mu = means[pos - 1]
        # tolerance covers the rounding of the rolling sums
        assert (mu >= row.low - 1e-9).all() and (mu < row.up + 1e-9).all()
    assert (seen == 1).all()


def test_conservation(index):
    assert index.total_positions == 10_000 - 50 + 1 == 9951
    assert sum(r.n_positions for r in index) == 9951


def test_structure_and_membership(series, index):
    check_structure(index, series)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 80), st.floats(0.05, 2.0), st.floats(0.05, 1.0),
       st.integers(0, 2**31), st.booleans())
def test_build_property(n, w, d, gamma, seed, cascade):
    w = min(w, n)
    x = generate(GeneratorConfig(n, seed=seed))
    idx = build(x, w, d, gamma, cascade=cascade)
    check_structure(idx, x)
    assert idx.total_positions == n - w + 1


def test_merge_example():
    x = np.array([5.5] * 4 + [0.5, 1.5, 0.5, 1.5] + [5.5] * 4)
    idx = build(x, 1, d=1.0, gamma=0.8)
    rows = idx.rows
    assert [(r.low, r.up) for r in rows] == [(0.0, 2.0), (5.0, 6.0)]
    assert rows[0].intervals.pairs() == [(5, 8)]
    assert rows[1].intervals.pairs() == [(1, 4), (9, 12)]


def test_merge_ratio_threshold():
    # one row per window, neighbours are adjacent positions: union ratio is 1/2
    x = np.arange(10) * 0.6
    assert build(x, 1, d=0.5, gamma=0.5).n_rows == 10
    merged = build(x, 1, d=0.5, gamma=0.8)
    assert merged.n_rows == 5
    assert all(r.intervals.n_intervals == 1 and r.n_positions == 2 for r in merged)
    assert build(x, 1, d=0.5, gamma=0.8, cascade=True).n_rows == 1


def test_merge_groups_pairwise_once():
    # rows 0..3 visited as 0,1,0,1,2,3,2,3: (0,1) merge, then (2,3) merge
    row_of_run = np.array([0, 1, 0, 1, 2, 3, 2, 3])
    np.testing.assert_array_equal(merge_groups(row_of_run, 4, 0.8), [0, 0, 1, 1])
    np.testing.assert_array_equal(merge_groups(row_of_run, 4, 0.8, cascade=True), [0, 0, 0, 0])


def test_fixed_width_keys():
    x = np.array([0.0, 0.49, 0.5, 0.99, 1.0, -0.01, -0.5, -0.51])
    idx = build(x, 1, d=0.5, gamma=0.01)
    for row in idx:
        for p in row.intervals.positions():
            assert row.low <= x[p - 1] < row.up


def test_index_row_example():
    x = spike_series()
    idx = build(x, 50)
    rows = [r for r in idx if r.low == 1.5]
    assert len(rows) == 1 and rows[0].up == 2.0
    assert rows[0].intervals.pairs() == [(1000, 1002)]
    assert rows[0].n_intervals == 1 and rows[0].n_positions == 3
    iset, touched = scan(idx, MeanRange(1.6, 1.9))
    assert iset.pairs() == [(1000, 1002)] and touched == 1
    assert estimate_intervals(idx, MeanRange(1.6, 1.9)) == 1


def test_scan_edges(series, index):
    below = index.lows[0] - 10
    iset, touched = scan(index, MeanRange(below, below + 1))
    assert iset.n_intervals == 0 and touched == 0
    assert estimate_intervals(index, MeanRange(below, below + 1)) == 0
    iset, touched = scan(index, MeanRange(index.lows[0], index.ups[-1]))
    assert iset.pairs() == [(1, 9951)] and touched == index.n_rows


def test_scan_covers_range(series, index):
    rng = np.random.default_rng(0)
    means = naive_means(series, 50)
    for _ in range(100):
        lo = rng.uniform(means.min() - 1, means.max())
        r = MeanRange(lo, lo + rng.exponential(1.0))
        iset, _ = scan(index, r)
        inside = np.flatnonzero((means >= r.lower) & (means <= r.upper)) + 1
        assert iset.contains(inside).all()
        assert estimate_intervals(index, r) >= iset.n_intervals


def test_round_trip(index):
    blob = dumps(index)
    back = deserialize(blob)
    assert back == index
    assert back.meta.tobytes() == index.meta.tobytes()
    assert int(back.meta["n_P"].sum()) == 9951
    assert len(blob) == index.file_size()
    buf = io.BytesIO()
    serialize(back, buf)
    assert buf.getvalue() == blob


def test_open_mmap_matches(tmp_path, index):
    path = tmp_path / "i.kvmi"
    index.save(path)
    mapped = KVIndex.open(path)
    assert mapped == index
    rng = np.random.default_rng(1)
    for _ in range(20):
        lo = rng.uniform(index.lows[0], index.ups[-1])
        r = MeanRange(lo, lo + 0.7)
        assert mapped.scan(r) == index.scan(r)
        cache = {}
        assert mapped.scan(r, cache=cache) == index.scan(r)
    mapped.close()


def test_truncated_and_corrupt(index):
    blob = dumps(index)
    for cut in (0, 10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CorruptIndex):
            deserialize(blob[:cut])
    bad = bytearray(blob)
    bad[0:4] = b"XXXX"
    with pytest.raises(CorruptIndex):
        deserialize(bytes(bad))
    bad = bytearray(blob)
    bad[4] = 99
    with pytest.raises(CorruptIndex):
        deserialize(bytes(bad))
    bad = bytearray(blob)
    # corrupt the interval count in the first row header
    bad[HEADER.size + 16] ^= 0x01
    with pytest.raises(CorruptIndex):
        deserialize(bytes(bad))


def test_truncated_file_open(tmp_path, index):
    path = tmp_path / "t.kvmi"
    path.write_bytes(dumps(index)[:-3])
    with pytest.raises(CorruptIndex):
        KVIndex.open(path)


def test_build_errors():
    with pytest.raises(SeriesTooShort):
        build(np.zeros(5), 6)
    with pytest.raises(ValueError):
        build(np.zeros(5), 2, d=0)
    with pytest.raises(ValueError):
        build(np.zeros(5), 2, gamma=1.5)


def test_chunked_and_spilled_build_identical(series):
    ref = build(series, 25)
    assert build(series, 25, chunk=777) == ref
    assert build(series, 25, chunk=1000, spill=True) == ref


def test_sliding_means_accuracy():
    x = generate(GeneratorConfig(20_000, seed=5)) + 1e4
    got = sliding_means(x, 64)
    ref = np.lib.stride_tricks.sliding_window_view(x, 64).mean(axis=1)
    assert np.max(np.abs(got - ref)) < 1e-9


def test_build_roughly_linear():
    x = generate(GeneratorConfig(2_000_000, seed=9))
    build(x[:1000], 50)

    def best(arr):
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            build(arr, 50)
            times.append(time.perf_counter() - t0)
        return min(times)

    ratio = best(x) / best(x[:1_000_000])
    assert 1.0 <= ratio <= 4.0, ratio
