"""Dense numeric kernels shared by the engine, scoring and pruning code.

Matrices are plain 2-D ``float64`` numpy arrays. The only non-numpy piece is
the portable PRNG (splitmix64 seeding a xoshiro256++ stream) so that seeded
weights are reproducible bit-for-bit in any language.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 2.0 ** -53


class ShapeError(ValueError):
    pass


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(m, scale: float = 1.0) -> np.ndarray:
    """Softmax of ``scale * m`` along each row, stabilised by the row max."""
    z = as_matrix(m) * scale
    z = z - z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def row_l2_norms(m) -> np.ndarray:
    m = as_matrix(m)
    return np.sqrt(np.einsum("ij,ij->i", m, m))


# --- PRNG -----------------------------------------------------------------


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256pp:
    """xoshiro256++ generator; the 256-bit state is expanded from a 64-bit
    seed with four splitmix64 draws."""

    def __init__(self, seed: int | None = None, state=None):
        if state is not None:
            self.s = [int(x) & MASK64 for x in state]
        else:
            sm = int(seed) & MASK64
            self.s = []
            for _ in range(4):
                sm, out = splitmix64(sm)
                self.s.append(out)
        if not any(self.s):
            raise ValueError("xoshiro256++ state must not be all zero")

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def u64_block(self, n: int) -> list[int]:
        # Inlined loop; this is the hot path when building models.
        s0, s1, s2, s3 = self.s
        out = [0] * n
        for i in range(n):
            x = (s0 + s3) & MASK64
            out[i] = ((((x << 23) | (x >> 41)) & MASK64) + s0) & MASK64
            t = (s1 << 17) & MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self.s = [s0, s1, s2, s3]
        return out

    def uniform01(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits of each draw."""
        raw = np.array(self.u64_block(n), dtype=np.uint64)
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53


def seeded_fill(rows: int, cols: int, seed: int, dist: str = "uniform", scale: float = 1.0) -> np.ndarray:
    """Deterministic ``rows x cols`` matrix, filled row-major.

    ``dist="uniform"`` draws from [-scale, scale); ``dist="gaussian"`` draws
    N(0, scale**2) by Box-Muller, consuming two uniforms per pair of outputs
    (cosine branch first, then sine branch).
    """
    if rows <= 0 or cols <= 0:
        raise ShapeError("rows and cols must be positive")
    n = rows * cols
    rng = Xoshiro256pp(seed)
    if dist == "uniform":
        u = rng.uniform01(n)
        vals = scale * (2.0 * u - 1.0)
    elif dist == "gaussian":
        pairs = (n + 1) // 2
        u = rng.uniform01(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u in (0, 1]
        theta = 2.0 * math.pi * u[:, 1]
        vals = np.empty(2 * pairs)
        vals[0::2] = radius * np.cos(theta)
        vals[1::2] = radius * np.sin(theta)
        vals = scale * vals[:n]
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return vals.reshape(rows, cols)


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed (used to give each weight its own stream)."""
    state = 0
    for p in parts:
        state, out = splitmix64((state ^ (int(p) & MASK64)) & MASK64)
        state = out
    return state
