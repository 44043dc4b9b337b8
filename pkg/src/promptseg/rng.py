"""Counter-based pseudo-random numbers.

Every random draw in the package (dataset synthesis, weight init, batch
shuffling) is a pure function of ``(seed, stream, counter)`` through the
splitmix64 mixer, so datasets and training runs reproduce bit-identically
on any machine with IEEE-754 doubles.  No hidden RNG state exists.

splitmix64 (the documented mixer):

    z = (x + 0x9E3779B97F4A7C15) mod 2^64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2^64
    out = z ^ (z >> 31)

Uniform doubles take the top 53 bits of ``out`` divided by 2^53.
Gaussians come from Box-Muller pairs of uniforms.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)


def _mix_u64(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over a uint64 array."""
    z = (x + _GAMMA).astype(_U64)
    z = ((z ^ (z >> _U64(30))) * _M1).astype(_U64)
    z = ((z ^ (z >> _U64(27))) * _M2).astype(_U64)
    return z ^ (z >> _U64(31))


def splitmix64(x: int) -> int:
    """One application of the splitmix64 finalizer (pure, stateless)."""
    return int(_mix_u64(np.array([x], dtype=_U64))[0])


class CounterRng:
    """Stateless-by-construction random stream.

    The object holds ``(seed, stream)`` and a running counter; the value
    at counter ``i`` never depends on draws made in other streams, so
    any part of a dataset or model can be regenerated in isolation.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._base = _U64(splitmix64(self.seed) ^ splitmix64(~self.stream & 0xFFFFFFFFFFFFFFFF))
        self._ctr = 0

    def child(self, stream: int) -> "CounterRng":
        """Derive an independent stream (flat namespace of stream ids)."""
        return CounterRng(splitmix64(self.seed ^ splitmix64(self.stream)), stream)

    def _raw(self, n: int) -> np.ndarray:
        ctr = np.arange(self._ctr, self._ctr + n, dtype=_U64)
        self._ctr += n
        return _mix_u64(ctr ^ self._base)

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self._raw(n) >> _U64(11)).astype(np.float64) / float(1 << 53)
        return lo + (hi - lo) * u

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(self.uniforms(1, lo, hi)[0])

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive (modulo bias is negligible
        for the tiny ranges used here)."""
        span = hi - lo + 1
        return lo + self.next_u64() % span

    def normals(self, shape, scale: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if np.ndim(shape) or shape else 1
        m = (n + 1) // 2
        u1 = np.maximum(self.uniforms(m), 1e-300)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        pair = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return (pair[:n] * scale).reshape(shape)

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        idx = np.arange(n)
        draws = self._raw(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k] % _U64(i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx
