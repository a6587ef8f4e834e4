"""Counter-based normal variates for reproducible parallel Monte Carlo.

Every normal draw is a pure function of ``(seed, path, step, stream,
index)``, so path ensembles are identical regardless of execution order,
chunking, or worker count.  The generator is Philox-4x64 with 10 rounds;
its raw output matches :class:`numpy.random.Philox` word for word, which
the test suite uses as an independent reference.  Uniforms take the top
53 bits of each word and normals come from a Box-Muller pair, four
normals per block.

Counter layout: ``(block_index, step, path, stream)`` with the 64-bit
user seed as the first key word.  Streams separate independent noise
purposes (state noise, variance-process noise, date-level increments).
"""

import numba as nb
import numpy as np

# second key word; arbitrary fixed odd constant
KEY1 = np.uint64(0x5DEECE66D1CE6E93)

STREAM_STATE = 0
STREAM_VOL = 1
STREAM_DATES = 2

_TWO53 = 9007199254740992.0
_TWOPI = 6.283185307179586


@nb.njit(nb.types.UniTuple(nb.uint64, 2)(nb.uint64, nb.uint64), inline="always")
def _mul_hilo(a, b):
    # 64x64 -> 128 bit product from 32-bit limbs
    lo = a * b
    a_lo = a & nb.uint64(0xFFFFFFFF)
    a_hi = a >> nb.uint64(32)
    b_lo = b & nb.uint64(0xFFFFFFFF)
    b_hi = b >> nb.uint64(32)
    t = a_lo * b_lo
    carry = t >> nb.uint64(32)
    mid1 = a_hi * b_lo + carry
    mid2 = a_lo * b_hi + (mid1 & nb.uint64(0xFFFFFFFF))
    hi = a_hi * b_hi + (mid1 >> nb.uint64(32)) + (mid2 >> nb.uint64(32))
    return hi, lo


@nb.njit(
    nb.types.UniTuple(nb.uint64, 4)(
        nb.uint64, nb.uint64, nb.uint64, nb.uint64, nb.uint64, nb.uint64
    ),
    inline="always",
)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten Philox-4x64 rounds of the counter ``(c0..c3)`` under key
    ``(k0, k1)``."""
    for _ in range(10):
        hi0, lo0 = _mul_hilo(nb.uint64(0xD2E7470EE14C6C93), c0)
        hi1, lo1 = _mul_hilo(nb.uint64(0xCA5A826395121157), c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + nb.uint64(0x9E3779B97F4A7C15)
        k1 = k1 + nb.uint64(0xBB67AE8584CAA73B)
    return c0, c1, c2, c3


@nb.njit(
    nb.types.UniTuple(nb.float64, 4)(
        nb.uint64, nb.uint64, nb.uint64, nb.uint64, nb.uint64
    )
)
def normal_block(block, step, path, stream, seed):
    """Four standard normals for counter ``(block, step, path, stream)``."""
    x0, x1, x2, x3 = philox4x64(block, step, path, stream, seed, KEY1)
    u1 = 1.0 - (np.float64(x0 >> nb.uint64(11)) / _TWO53)  # (0, 1]
    u2 = np.float64(x1 >> nb.uint64(11)) / _TWO53          # [0, 1)
    u3 = 1.0 - (np.float64(x2 >> nb.uint64(11)) / _TWO53)
    u4 = np.float64(x3 >> nb.uint64(11)) / _TWO53
    r1 = np.sqrt(-2.0 * np.log(u1))
    a1 = _TWOPI * u2
    r2 = np.sqrt(-2.0 * np.log(u3))
    a2 = _TWOPI * u4
    return r1 * np.cos(a1), r1 * np.sin(a1), r2 * np.cos(a2), r2 * np.sin(a2)


@nb.njit(inline="always")
def fill_normals(out, step, path, stream, seed):
    """Fill ``out`` (1-d) with the normals of ``(path, step, stream)``.

    Draws beyond ``len(out)`` within the last block are discarded, so the
    values of ``out[:k]`` never depend on ``len(out)``.
    """
    n = out.shape[0]
    for j in range((n + 3) // 4):
        z0, z1, z2, z3 = normal_block(
            nb.uint64(j), nb.uint64(step), nb.uint64(path), nb.uint64(stream),
            nb.uint64(seed),
        )
        b = 4 * j
        out[b] = z0
        if b + 1 < n:
            out[b + 1] = z1
        if b + 2 < n:
            out[b + 2] = z2
        if b + 3 < n:
            out[b + 3] = z3


@nb.njit
def _normals_for(count, step, path, stream, seed):
    out = np.empty(count)
    fill_normals(out, step, path, stream, seed)
    return out


def normals_for(seed, path, step, stream, count):
    """Numpy-facing accessor used by tests and estimators."""
    return _normals_for(int(count), np.uint64(step), np.uint64(path),
                        np.uint64(stream), np.uint64(seed))


@nb.njit
def _raw_block(c0, c1, c2, c3, k0, k1):
    out = np.empty(4, dtype=np.uint64)
    x0, x1, x2, x3 = philox4x64(
        nb.uint64(c0), nb.uint64(c1), nb.uint64(c2), nb.uint64(c3),
        nb.uint64(k0), nb.uint64(k1),
    )
    out[0] = x0
    out[1] = x1
    out[2] = x2
    out[3] = x3
    return out


def raw_block(counter, key):
    """Raw 4x64 output for a counter/key pair (reference-test hook)."""
    c = np.asarray(counter, dtype=np.uint64)
    k = np.asarray(key, dtype=np.uint64)
    return _raw_block(c[0], c[1], c[2], c[3], k[0], k[1])
