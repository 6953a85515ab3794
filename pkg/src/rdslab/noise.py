"""Counter-based noise paths.

A path is a two-sided sequence ``omega_i`` (``i`` ranging over all integers)
of i.i.d. noise parameters.  Values are never stored: ``value(i)`` is a pure
function of ``(seed, i, law)`` computed from one Philox block, so windows at
any depth of the past agree bit-for-bit with each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

_OFFSET = 1 << 63
_MASK = (1 << 64) - 1
_TO_UNIT = 2.0 ** -53

LAWS = ("uniform_full", "ball", "zero")


@dataclass(frozen=True)
class NoiseLaw:
    """Law ``P`` of a single noise parameter.

    ``uniform_full`` is Lebesgue measure on the torus ``[0,1)^2``; ``ball`` is
    the uniform distribution on the disk of radius ``sigma`` centred at 0;
    ``zero`` is the point mass at the origin (deterministic oracle runs).
    """

    kind: str = "uniform_full"
    sigma: float = 0.0
    dim: int = 2

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ValueError(f"unknown noise law {self.kind!r}; expected one of {LAWS}")
        if self.kind == "ball" and not (0.0 < self.sigma < 0.5):
            raise ValueError("ball noise needs 0 < sigma < 1/2")
        if self.dim != 2:
            raise ValueError("only two-dimensional noise is supported")

    def transform(self, words: np.ndarray) -> np.ndarray:
        """Map raw uint64 words of shape (n, 4) to noise values of shape (n, 2)."""
        u = (words[:, :2] >> np.uint64(11)).astype(np.float64) * _TO_UNIT
        if self.kind == "uniform_full":
            return u
        if self.kind == "zero":
            return np.zeros_like(u)
        r = self.sigma * np.sqrt(u[:, 0])
        phi = 2.0 * np.pi * u[:, 1]
        return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma}


def _raw_block(seed: int, start: int, count: int) -> np.ndarray:
    # one 4-word Philox block per absolute index; consecutive indices are
    # consecutive counters, so a window is a single stream
    if count <= 0:
        return np.empty((0, 4), dtype=np.uint64)
    # large python ints would be routed through float64; build uint64 arrays
    counter = np.array([(start + _OFFSET) & _MASK, 0, 0, 0], dtype=np.uint64)
    key = np.array([seed & _MASK, (seed >> 64) & _MASK], dtype=np.uint64)
    bg = np.random.Philox(key=key, counter=counter)
    return bg.random_raw(4 * count).reshape(count, 4)


@dataclass(frozen=True)
class NoisePath:
    """A seed-indexed two-sided noise sequence ``(omega_i)``.

    ``shift(k)`` realises the left shift: ``path.shift(k).value(i) ==
    path.value(i + k)``.  ``splice_past`` replaces every value at or before a
    given index by the values of another seed (used for far-past
    perturbation experiments).
    """

    seed: int
    law: NoiseLaw = field(default_factory=NoiseLaw)
    offset: int = 0
    cut: int | None = None
    past_seed: int | None = None

    def values(self, start: int, stop: int) -> np.ndarray:
        """Noise values for indices ``start, ..., stop - 1`` as an (n, 2) array."""
        start, stop = int(start), int(stop)
        n = max(stop - start, 0)
        a = start + self.offset
        words = _raw_block(self.seed, a, n)
        if self.cut is not None and n:
            k = min(max(self.cut - a + 1, 0), n)
            if k:
                words[:k] = _raw_block(self.past_seed, a, k)
        return self.law.transform(words)

    def value(self, i: int) -> np.ndarray:
        return self.values(i, i + 1)[0]

    def shift(self, k: int) -> "NoisePath":
        return replace(self, offset=self.offset + int(k))

    def splice_past(self, index: int, other_seed: int) -> "NoisePath":
        """Replace all values at indices ``<= index`` by those of ``other_seed``."""
        if self.cut is not None:
            raise ValueError("path already carries a spliced past")
        return replace(self, cut=int(index) + self.offset, past_seed=int(other_seed))

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "law": self.law.to_dict(), "offset": self.offset}
        if self.cut is not None:
            d.update(cut=self.cut, past_seed=self.past_seed)
        return d
