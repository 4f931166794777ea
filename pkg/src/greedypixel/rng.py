"""Seeded shift-register generator shared by every randomized component.

The generator is xorshift64* (Vigna, 2016) seeded through splitmix64, so the
same seed yields the same stream in any language that implements these two
published recurrences with wrapping 64-bit unsigned arithmetic:

    splitmix64:  z += 0x9E3779B97F4A7C15
                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                 return z ^ (z >> 31)

    xorshift64*: s ^= s >> 12; s ^= s << 25; s ^= s >> 27
                 return s * 0x2545F4914F6CDD1D

Integers in ``[0, n)`` are drawn with the multiply-shift map
``((r >> 32) * n) >> 32``.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
SPLITMIX_M1 = 0xBF58476D1CE4E5B9
SPLITMIX_M2 = 0x94D049BB133111EB
XORSHIFT_MULT = 0x2545F4914F6CDD1D


def splitmix64(z: int) -> int:
    """One splitmix64 output for the (already advanced) state ``z``."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * SPLITMIX_M1) & MASK64
    z = ((z ^ (z >> 27)) * SPLITMIX_M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Independent stream seed number ``index`` derived from ``seed``."""
    return splitmix64((seed + index * GOLDEN) & MASK64)


def initial_state(seed: int) -> int:
    state = splitmix64(seed & MASK64)
    return state if state != 0 else GOLDEN


class XorShift64Star:
    """xorshift64* stream. Not thread-safe; give each worker its own."""

    def __init__(self, seed: int):
        self.state = initial_state(seed)

    def next_u64(self) -> int:
        s = self.state
        s ^= s >> 12
        s ^= (s << 25) & MASK64
        s ^= s >> 27
        self.state = s
        return (s * XORSHIFT_MULT) & MASK64

    def below(self, n: int) -> int:
        """Uniform-ish integer in ``[0, n)``, ``n < 2**32``."""
        return ((self.next_u64() >> 32) * n) >> 32

    def uniform(self) -> float:
        """Float in ``[0, 1)`` with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top down."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
