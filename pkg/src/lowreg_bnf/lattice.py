"""Index lattices, truncated sequence states and weighted norms."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class InvalidInput(ValueError):
    """Raised when an operation receives arguments outside its domain."""


def as_index(n) -> tuple[int, ...]:
    """Normalize an integer or integer sequence to a mode index tuple."""
    if isinstance(n, (int, np.integer)):
        return (int(n),)
    return tuple(int(c) for c in n)


def japanese_bracket(x) -> float:
    """Return sqrt(1 + |x|^2) for a scalar or a d-tuple."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.sqrt(1.0 + np.sum(arr * arr)))


def hmean(xs: Sequence[float]) -> float:
    """Harmonic mean of a nonempty list of positive reals."""
    arr = np.asarray(list(xs), dtype=float)
    if arr.size == 0:
        raise InvalidInput("hmean of an empty list")
    if np.any(arr <= 0):
        raise InvalidInput("hmean requires positive entries")
    return float(1.0 / np.mean(1.0 / arr))


@dataclass(frozen=True)
class Lattice:
    """A finite, lexicographically ordered set of mode indices in Z^d."""

    indices: tuple[tuple[int, ...], ...]
    _pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = tuple(sorted(set(as_index(n) for n in self.indices)))
        if not idx:
            raise InvalidInput("empty lattice")
        dims = {len(n) for n in idx}
        if len(dims) != 1:
            raise InvalidInput("mixed index dimensions")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "_pos", {n: i for i, n in enumerate(idx)})

    @classmethod
    def interval(cls, lo: int, hi: int) -> "Lattice":
        return cls(tuple((n,) for n in range(lo, hi + 1)))

    @classmethod
    def square(cls, radius: int) -> "Lattice":
        rng = range(-radius, radius + 1)
        return cls(tuple(itertools.product(rng, rng)))

    @property
    def d(self) -> int:
        return len(self.indices[0])

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def radius(self) -> int:
        return max(max(abs(c) for c in n) for n in self.indices)

    def __contains__(self, n) -> bool:
        return as_index(n) in self._pos

    def position(self, n) -> int:
        try:
            return self._pos[as_index(n)]
        except KeyError:
            raise InvalidInput(f"index {n} outside the lattice") from None

    def positions(self, ns: Iterable) -> np.ndarray:
        return np.array([self.position(n) for n in ns], dtype=np.int64)

    def coords(self) -> np.ndarray:
        return np.array(self.indices, dtype=np.int64)

    def brackets(self) -> np.ndarray:
        c = self.coords().astype(float)
        return np.sqrt(1.0 + np.sum(c * c, axis=1))

    def restrict(self, radius: int) -> "Lattice":
        return Lattice(tuple(n for n in self.indices if max(abs(c) for c in n) <= radius))


@dataclass(frozen=True)
class State:
    """Complex amplitudes on a lattice; values[i] belongs to lattice.indices[i]."""

    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex).reshape(-1)
        if v.size != self.lattice.size:
            raise InvalidInput("state size does not match lattice")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, lattice: Lattice) -> "State":
        return cls(lattice, np.zeros(lattice.size, dtype=complex))

    @classmethod
    def from_entries(cls, lattice: Lattice, entries: Mapping) -> "State":
        v = np.zeros(lattice.size, dtype=complex)
        for n, a in entries.items():
            v[lattice.position(n)] += a
        return cls(lattice, v)

    @property
    def truncation_radius(self) -> int:
        return self.lattice.radius

    @property
    def entries(self) -> dict:
        return {n: complex(a) for n, a in zip(self.lattice.indices, self.values) if a != 0}

    def __getitem__(self, n) -> complex:
        return complex(self.values[self.lattice.position(n)])

    def with_values(self, values) -> "State":
        return State(self.lattice, values)

    def pruned(self, threshold: float) -> "State":
        v = np.where(np.abs(self.values) > threshold, self.values, 0)
        return State(self.lattice, v)

    def to_json(self) -> str:
        rows = [
            {"index": list(n), "re": float(a.real), "im": float(a.imag)}
            for n, a in zip(self.lattice.indices, self.values)
        ]
        return json.dumps(rows)

    @classmethod
    def from_json(cls, text: str, lattice: Lattice | None = None) -> "State":
        rows = json.loads(text)
        if lattice is None:
            lattice = Lattice(tuple(tuple(r["index"]) for r in rows))
        return cls.from_entries(
            lattice, {tuple(r["index"]): complex(r["re"], r["im"]) for r in rows}
        )


def hs_norm(u: State | np.ndarray, s: float, lattice: Lattice | None = None) -> float:
    """(sum <k>^{2s} |u_k|^2)^{1/2}."""
    if isinstance(u, State):
        lattice, vals = u.lattice, u.values
    else:
        if lattice is None:
            raise InvalidInput("a lattice is required for a bare amplitude array")
        vals = np.asarray(u)
    w = lattice.brackets() ** (2.0 * s)
    return float(np.sqrt(np.sum(w * np.abs(vals) ** 2)))


def random_state(lattice: Lattice, radius: float, s: float, rng: np.random.Generator,
                 decay: float = 0.0, support: int | None = None) -> State:
    """Gaussian random state rescaled to h^s norm `radius`."""
    br = lattice.brackets()
    v = (rng.standard_normal(lattice.size) + 1j * rng.standard_normal(lattice.size)) * br ** (-decay)
    if support is not None:
        mask = np.array([max(abs(c) for c in n) <= support for n in lattice.indices])
        v = np.where(mask, v, 0)
    nrm = hs_norm(v, s, lattice)
    if nrm > 0:
        v = v * (radius / nrm)
    return State(lattice, v)
