"""Permutations of row indices and reproducible permutation streams.

A permutation is stored as an index map ``m`` and acts on data by
gathering rows: ``apply_rows(p, v)[i] == v[m[i]]``.  Composition follows
function composition on the maps, ``compose(a, b)`` acts like "apply a,
then b" on row-gathered data, and the same convention is used everywhere
in the package so that statistics never mix gather and scatter forms.

Streams are counter based: the b-th permutation is a pure function of
``(seed, n, b)``.  Drawing index 500 first and index 3 second gives the
same two permutations as drawing them in any other order or in parallel
workers, which makes every downstream result independent of scheduling.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Permutation:
    """Bijection on {0, ..., n-1} stored as a gather map."""

    map: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.map)
        if m.ndim != 1 or m.size == 0:
            raise InvalidInputError(f"permutation map must be 1-d and nonempty, got shape {m.shape}")
        if not np.issubdtype(m.dtype, np.integer):
            raise InvalidInputError("permutation map must be integer valued")
        m = m.astype(np.int64, copy=True)
        seen = np.zeros(m.size, dtype=bool)
        if m.min() < 0 or m.max() >= m.size:
            raise InvalidInputError("permutation map entries out of range")
        seen[m] = True
        if not seen.all():
            raise InvalidInputError("permutation map is not a bijection")
        m.setflags(write=False)
        object.__setattr__(self, "map", m)

    @property
    def n(self) -> int:
        return int(self.map.size)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map, np.arange(self.n)))


def identity(n: int) -> Permutation:
    return Permutation(np.arange(n))


def apply_rows(p: Permutation, v: np.ndarray) -> np.ndarray:
    """Gather rows of ``v`` (vector or matrix) along axis 0."""
    v = np.asarray(v)
    if v.shape[0] != p.n:
        raise InvalidInputError(f"permutation acts on {p.n} rows, data has {v.shape[0]}")
    return v[p.map]


def compose(a: Permutation, b: Permutation) -> Permutation:
    """Permutation c with apply_rows(c, v) == apply_rows(b, apply_rows(a, v))."""
    if a.n != b.n:
        raise InvalidInputError("cannot compose permutations of different sizes")
    return Permutation(a.map[b.map])


def inverse(p: Permutation) -> Permutation:
    inv = np.empty(p.n, dtype=np.int64)
    inv[p.map] = np.arange(p.n)
    return Permutation(inv)


def enumerate_all(n: int) -> list[Permutation]:
    """All n! permutations of size n, in lexicographic order of their maps.

    Guarded to small n; the factorial blows up fast and exhaustive
    enumeration is only meant for exact reference computations.
    """
    if not 1 <= n <= 8:
        raise InvalidInputError(f"enumerate_all supports 1 <= n <= 8, got {n}")
    return [Permutation(np.array(t, dtype=np.int64)) for t in itertools.permutations(range(n))]


@dataclass
class PermStream:
    """Addressable stream of uniform random permutations of size ``n``.

    ``draw(b)`` depends only on ``(seed, n, b)``: each index keys its own
    counter-based generator, so streams can be consumed out of order or
    split across workers without changing any permutation.  ``counter``
    only tracks the next index for the sequential ``next()`` sugar.
    """

    seed: int
    n: int
    counter: int = field(default=0)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError(f"stream size must be positive, got {self.n}")
        if self.counter < 0:
            raise InvalidInputError("counter must be nonnegative")

    def draw(self, b: int) -> Permutation:
        if b < 0:
            raise InvalidInputError("permutation index must be nonnegative")
        ss = np.random.SeedSequence(self.seed, spawn_key=(b,))
        rng = np.random.Generator(np.random.Philox(ss))
        return Permutation(rng.permutation(self.n))

    def next(self) -> Permutation:
        p = self.draw(self.counter)
        self.counter += 1
        return p

    def draw_block(self, start: int, count: int) -> np.ndarray:
        """Maps of draw(start), ..., draw(start+count-1) stacked as (count, n).

        Bulk form of ``draw`` for the vectorized test engines; row j is
        exactly ``draw(start + j).map``.
        """
        out = np.empty((count, self.n), dtype=np.int64)
        for j in range(count):
            out[j] = self.draw(start + j).map
        return out
