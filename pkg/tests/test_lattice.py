import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lowreg_bnf.lattice import (InvalidInput, Lattice, State, as_index, hmean, hs_norm, japanese_bracket,
                                random_state)


@pytest.mark.parametrize("x, want", [(0, 1.0), (1, math.sqrt(2)), ((3, 4), math.sqrt(26))])
def test_japanese_bracket_values(x, want):
    assert japanese_bracket(x) == pytest.approx(want, rel=1e-15)


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=3))
def test_bracket_at_least_one_and_dominates_norm(x):
    b = japanese_bracket(x)
    assert b >= 1.0
    assert b >= math.sqrt(sum(c * c for c in x))


def test_hmean_examples():
    assert hmean([1, 1, 1]) == 1.0
    assert hmean([1, 3]) == pytest.approx(1.5)
    assert hmean([7.25]) == pytest.approx(7.25)


@pytest.mark.parametrize("bad", [[], [1.0, 0.0], [2.0, -1.0]])
def test_hmean_rejects(bad):
    with pytest.raises(InvalidInput):
        hmean(bad)


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=8))
def test_hmean_between_min_and_arithmetic_mean(xs):
    h = hmean(xs)
    assert min(xs) * (1 - 1e-12) <= h <= np.mean(xs) * (1 + 1e-12)


def test_lattice_ordering_and_positions():
    lat = Lattice(((3,), (1,), (2,), (1,)))
    assert lat.indices == ((1,), (2,), (3,))
    assert lat.position(2) == 1
    assert 4 not in lat
    with pytest.raises(InvalidInput):
        lat.position(4)
    sq = Lattice.square(1)
    assert sq.size == 9 and sq.d == 2 and sq.radius == 1
    assert sq.restrict(0).indices == ((0, 0),)


def test_lattice_rejects_mixed_and_empty():
    with pytest.raises(InvalidInput):
        Lattice(((1,), (1, 2)))
    with pytest.raises(InvalidInput):
        Lattice(())


def test_hs_norm_examples():
    lat = Lattice.interval(1, 5)
    u = State.from_entries(lat, {3: 1.0})
    for s in (0.0, 0.5, 1.0, 2.5):
        assert hs_norm(u, s) == pytest.approx(japanese_bracket(3) ** s)
    v = State(lat, [1, 2j, 0, 0, 3])
    assert hs_norm(v, 0) == pytest.approx(math.sqrt(14))
    w = State.from_entries(lat, {1: 1.0, 2: 1.0})
    assert hs_norm(w, 1) == pytest.approx(math.sqrt(7), rel=1e-12)


def test_hs_norm_needs_lattice_for_arrays():
    with pytest.raises(InvalidInput):
        hs_norm(np.ones(3), 1.0)


@given(st.floats(0, 3), st.floats(0, 3))
def test_hs_norm_monotone_in_s(s1, s2):
    lat = Lattice.interval(-4, 4)
    u = random_state(lat, 1.0, 0.0, np.random.default_rng(0))
    lo, hi = sorted((s1, s2))
    assert hs_norm(u, lo) <= hs_norm(u, hi) * (1 + 1e-12)


def test_state_json_round_trip():
    lat = Lattice.square(1)
    u = random_state(lat, 0.3, 1.0, np.random.default_rng(1))
    back = State.from_json(u.to_json())
    assert back.lattice == lat
    assert np.array_equal(back.values, u.values)
    assert json.loads(u.to_json())[0]["index"] == [-1, -1]


def test_state_size_checked_and_immutable():
    lat = Lattice.interval(1, 3)
    with pytest.raises(InvalidInput):
        State(lat, [1, 2])
    u = State.zeros(lat)
    with pytest.raises(ValueError):
        u.values[0] = 1


def test_random_state_radius_and_support():
    lat = Lattice.interval(1, 20)
    u = random_state(lat, 0.7, 0.5, np.random.default_rng(3), decay=1.0, support=4)
    assert hs_norm(u, 0.5) == pytest.approx(0.7)
    assert np.all(u.values[4:] == 0)


def test_as_index():
    assert as_index(3) == (3,)
    assert as_index(np.int64(2)) == (2,)
    assert as_index([1, -2]) == (1, -2)
