"""Portable SplitMix64 random streams.

Every random draw in the package goes through :class:`SplitMix64` so a seed
produces the same data on any platform. The generator is counter based::

    state_k = seed + k * 0x9E3779B97F4A7C15        (mod 2**64)
    z = state_k
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out_k = z ^ (z >> 31)

Doubles use the top 53 bits (``(out >> 11) * 2**-53``). Normals use the
Box-Muller transform on pairs of doubles. Independent sub-streams are
derived with :func:`derive_seed`, which folds integer keys through the same
mixer.
"""

import math
import zlib

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_GOLDEN_U = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_int(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix_array(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _key_to_int(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_seed(seed, *keys):
    """Fold ``keys`` (ints or strings) into a child seed of ``seed``."""
    h = _mix_int(int(seed) + GOLDEN)
    for key in keys:
        h = _mix_int(h ^ _mix_int(_key_to_int(key) + 2 * GOLDEN))
    return h


class SplitMix64:
    """Counter-based 64-bit generator with a few numpy-returning samplers."""

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def spawn(self, *keys):
        return SplitMix64(derive_seed(self.state, *keys))

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return _mix_int(self.state)

    def u64(self, n):
        n = int(n)
        with np.errstate(over="ignore"):
            counters = np.uint64(self.state) + _GOLDEN_U * np.arange(
                1, n + 1, dtype=np.uint64
            )
            out = _mix_array(counters)
        self.state = (self.state + n * GOLDEN) & MASK64
        return out

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        vals = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(vals[0])
        return vals.reshape(size)

    def uniform(self, low, high, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, size=None, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = z * scale
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, high, size=None):
        """Integers in [0, high) via multiply-shift on 53-bit doubles."""
        u = self.random(size)
        return np.minimum(np.floor(u * high), high - 1).astype(np.int64)

    def permutation(self, n):
        # Fisher-Yates driven by a fixed-length block of uniforms.
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.random(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def log_gamma_variate(self, shape):
        """Log of a Gamma(shape, 1) draw (Marsaglia-Tsang).

        Returned on the log scale so tiny shapes (alpha ~ 0.01) never
        underflow to zero before normalisation.
        """
        if shape <= 0:
            raise ValueError(f"gamma shape must be positive, got {shape}")
        boost = 0.0
        if shape < 1.0:
            u = 1.0 - self.random()
            boost = math.log(u) / shape
            shape += 1.0
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0:
                continue
            v = v * v * v
            u = 1.0 - self.random()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return math.log(d * v) + boost

    def dirichlet(self, alpha, k):
        """One draw from the symmetric Dirichlet(alpha * 1_k)."""
        logs = np.array([self.log_gamma_variate(alpha) for _ in range(k)])
        logs -= logs.max()
        p = np.exp(logs)
        return p / p.sum()
