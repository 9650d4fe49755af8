import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvmatch.intervals import IntervalSet, intersect, shift, union


def bitset(iset, size=1100):
    bits = np.zeros(size, bool)
    for lo, hi in iset.pairs():
        bits[lo:hi + 1] = True
    return bits


def random_set(rng, size=1000, density=0.4):
    return IntervalSet.from_positions(np.flatnonzero(rng.random(size) < density) + 1)


def test_counts():
    s = IntervalSet.from_pairs([(1, 3), (7, 7), (10, 12)])
    assert s.n_intervals == 3 and s.n_positions == 7
    np.testing.assert_array_equal(s.positions(), [1, 2, 3, 7, 10, 11, 12])


def test_from_positions_coalesces():
    s = IntervalSet.from_positions([5, 6, 7, 9, 11, 12])
    assert s.pairs() == [(5, 7), (9, 9), (11, 12)]


def test_union_merges_adjacent():
    a = IntervalSet.from_pairs([(5, 5), (7, 7)])
    b = IntervalSet.from_pairs([(6, 6), (8, 8)])
    assert union([a, b]).pairs() == [(5, 8)]


def test_shift_examples():
    assert shift(IntervalSet.from_pairs([(100, 110)]), 50, 1000, 100).pairs() == [(50, 60)]
    s = IntervalSet.from_pairs([(3, 9), (20, 30)])
    assert shift(s, 0, 1000, 10) == s
    assert shift(IntervalSet.from_pairs([(3, 10)]), 5, 13, 10).pairs() == [(1, 4)]


def test_shift_drops_out_of_range():
    s = IntervalSet.from_pairs([(1, 4), (8, 9), (40, 50)])
    assert shift(s, 5, 30, 1).pairs() == [(3, 4)]


def test_intersect_examples():
    a = IntervalSet.from_pairs([(10, 20)])
    assert intersect(a, IntervalSet.from_pairs([(15, 30)])).pairs() == [(15, 20)]
    assert intersect(a, IntervalSet.empty()).n_intervals == 0
    assert intersect(IntervalSet.empty(), a).n_intervals == 0


def test_intersect_bitset_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = random_set(rng, density=rng.uniform(0.05, 0.95))
        b = random_set(rng, density=rng.uniform(0.05, 0.95))
        got = intersect(a, b)
        assert got.is_valid()
        np.testing.assert_array_equal(bitset(got), bitset(a) & bitset(b))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 300), max_size=120), st.lists(st.integers(1, 300), max_size=120))
def test_intersect_property(xs, ys):
    a, b = IntervalSet.from_positions(sorted(set(xs))), IntervalSet.from_positions(sorted(set(ys)))
    got = intersect(a, b)
    assert got.is_valid()
    assert set(got.positions().tolist()) == set(xs) & set(ys)
    assert got == intersect(b, a)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 300), max_size=120), st.integers(0, 100), st.integers(1, 250))
def test_shift_property(xs, offset, limit):
    s = IntervalSet.from_positions(sorted(set(xs)))
    got = shift(s, offset, limit + 9, 10)
    assert got.is_valid()
    expect = {p - offset for p in xs if 1 <= p - offset <= limit}
    assert set(got.positions().tolist()) == expect


def test_contains():
    s = IntervalSet.from_pairs([(2, 4), (9, 9)])
    np.testing.assert_array_equal(s.contains([1, 2, 4, 5, 9, 10]),
                                  [False, True, True, False, True, False])


def test_invalid_pairs_rejected():
    with pytest.raises(ValueError):
        IntervalSet.from_pairs([(5, 3)])
