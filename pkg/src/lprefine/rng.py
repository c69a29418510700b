"""Seeded synthetic instances that any language can regenerate exactly.

The generator is SplitMix64:

    state <- state + 0x9E3779B97F4A7C15            (mod 2^64)
    z <- state
    z <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9    (mod 2^64)
    z <- (z xor (z >> 27)) * 0x94D049BB133111EB    (mod 2^64)
    output z xor (z >> 31)

A uniform double in ``[0, 1)`` is ``(output >> 11) * 2^-53``.  Normal
deviates use the Box-Muller cosine branch only, one normal per two uniforms:
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.  Matrices are filled row by row.
"""

from __future__ import annotations

import math

import numpy as np

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, rows: int, cols: int | None = None) -> np.ndarray:
        count = rows if cols is None else rows * cols
        vals = np.array([self.normal() for _ in range(count)], dtype=float)
        return vals if cols is None else vals.reshape(rows, cols)


def synthetic_instance(seed: int, n: int, m2: int, d_rows: int, m1: int = 0, pure: bool = False):
    """``(A, M, N, d, b)`` with Gaussian entries drawn in that order.

    ``b = A x_f`` for a Gaussian ``x_f`` drawn last, so the constraint is
    always consistent.  With ``pure=True`` the ``M`` block is empty and
    ``d = 0`` (no draws are spent on them).
    """
    gen = SplitMix64(seed)
    A = gen.normals(d_rows, n)
    if pure:
        M = np.zeros((0, n))
    else:
        M = gen.normals(m1, n)
    N = gen.normals(m2, n)
    d = np.zeros(n) if pure else gen.normals(n)
    x_f = gen.normals(n)
    b = A @ x_f
    return A, M, N, d, b
