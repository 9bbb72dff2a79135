"""Seeded randomness on a Philox-4x64 counter-based stream.

``Rng(seed)`` keys numpy's Philox bit generator directly with the 64-bit seed
(counter starts at zero), so the raw stream is a pure function of the seed
and the number of draws.  On top of the raw 64-bit words:

* uniforms take the top 53 bits: ``(word >> 11) * 2**-53`` in ``[0, 1)``;
* normals use the Box-Muller transform on pairs of uniforms
  ``u1, u2``: ``sqrt(-2 ln(1 - u1)) * (cos(2 pi u2), sin(2 pi u2))``;
* integers and permutations use numpy's ``Generator`` over the same stream.

Independent sub-streams are derived with :meth:`Rng.fork`, which hashes the
parent seed with a string tag, so adding draws to one component never shifts
another component's stream.
"""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import Tensor

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


class Rng:
    algorithm = "philox4x64-10"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._bitgen = np.random.Philox(key=self.seed)
        self._gen = np.random.Generator(self._bitgen)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"

    def fork(self, tag: str) -> Rng:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, zlib.crc32(tag.encode("utf-8"))])
        return Rng(int(ss.generate_state(1, np.uint64)[0]))

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n)).astype(np.uint64)

    def uniform(self, shape) -> np.ndarray:
        shape = _shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        shape = _shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform((pairs, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = _TWO_PI * u[:, 1]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def truncated_normal(self, shape, std: float, bound: float = 2.0) -> np.ndarray:
        """Normal(0, std) redrawn until every value lies within ``bound`` std."""
        z = self.normal(shape)
        bad = np.abs(z) > bound
        while bad.any():
            z[bad] = self.normal(int(bad.sum()))
            bad = np.abs(z) > bound
        return z * std

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, p=p)


def _shape(shape) -> tuple[int, ...]:
    return (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)


def sample_gaussian(rng: Rng, shape) -> Tensor:
    """I.i.d. standard normal samples as a constant tensor."""
    return Tensor(rng.normal(shape))
