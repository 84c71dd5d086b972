"""
SA3 - Seeded Random Streams

64-bit linear congruential generator
    state' = state · 6364136223846793005 + 1442695040888963407  (mod 2^64)
emitting the top 32 bits of each new state, plus a splitmix-style mixer
that derives independent per-record seeds.

Block draws advance the state exactly as the same number of scalar draws
would; they are computed with numpy's wrapping uint64 arithmetic.
"""

import math

import numpy as np

from standards.errors import InvalidArgumentError

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
MASK64 = (1 << 64) - 1
TWO_32 = float(1 << 32)


def mix(seed: int, index: int) -> int:
    """Splitmix64 finaliser over (seed, index); a deterministic 64-bit derived seed."""
    z = (seed * 0x9E3779B97F4A7C15 + index + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Lcg:
    """
    Deterministic generator with a language-independent stream.

    Usage:
        rng = Lcg(mix(seed, index))
        count = rng.randint(1, 4)
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u32(self) -> int:
        self.state = (self.state * MULTIPLIER + INCREMENT) & MASK64
        return self.state >> 32

    def uniform(self) -> float:
        """Uniform in the open interval (0, 1)."""
        return (self.next_u32() + 0.5) / TWO_32

    def randint(self, low: int, high: int) -> int:
        """Integer in [low, high] inclusive."""
        if high < low:
            raise InvalidArgumentError(f"empty range [{low}, {high}]")
        return low + self.next_u32() % (high - low + 1)

    def choice(self, count: int) -> int:
        return self.randint(0, count - 1)

    def block_u32(self, count: int) -> np.ndarray:
        """The next `count` outputs as a uint64 array of 32-bit values."""
        if count < 1:
            raise InvalidArgumentError(f"block size must be ≥ 1, got {count}")
        a = np.full(count, MULTIPLIER, dtype=np.uint64)
        powers = np.multiply.accumulate(a)                      # a^k, k = 1..n
        previous = np.concatenate(([np.uint64(1)], powers[:-1]))  # a^(k-1)
        partial = np.cumsum(previous, dtype=np.uint64)          # Σ_{j<k} a^j
        states = powers * np.uint64(self.state) + np.uint64(INCREMENT) * partial
        self.state = int(states[-1])
        return states >> np.uint64(32)

    def uniform_block(self, count: int) -> np.ndarray:
        return (self.block_u32(count).astype(np.float64) + 0.5) / TWO_32

    def gaussian_block(self, count: int) -> np.ndarray:
        """Standard normal samples by Box-Muller over pairs of uniforms."""
        pairs = math.ceil(count / 2)
        u = self.uniform_block(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)[:count]
