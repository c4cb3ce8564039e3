"""Deterministic parameter initialisation.

Stream definition (fixed, language independent):

1. ``state0 = seed XOR fnv1a64(path)`` where ``path`` is the parameter's
   dotted name encoded as UTF-8.
2. The i-th 64-bit word (i = 1, 2, ...) is SplitMix64 of ``state0 + i*GAMMA``.
3. A word becomes a uniform in [0, 1) as ``(word >> 11) * 2**-53``.
4. Consecutive uniforms ``(u1, u2)`` give two standard normals by Box-Muller,
   ``r = sqrt(-2 ln(1 - u1))``, ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``.
5. Normals with magnitude above 2 are dropped; the survivors, scaled by
   ``std``, fill the tensor in row-major order.
"""

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
TRUNCATE = 2.0
DEFAULT_STD = 0.02


def fnv1a64(text):
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix64_words(state0, start, count):
    """Words ``start+1 .. start+count`` of the SplitMix64 stream as uint64."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(state0) + idx * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _normals(state0, start_pair, pairs):
    words = splitmix64_words(state0, 2 * start_pair, 2 * pairs)
    u = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
    out = []
    for u1, u2 in zip(u[0::2].tolist(), u[1::2].tolist()):
        # math.* rather than numpy ufuncs: libm results do not depend on SIMD dispatch
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        t = 2.0 * math.pi * u2
        out.append(r * math.cos(t))
        out.append(r * math.sin(t))
    return out


def truncated_normal_stream(seed, path, count):
    """First ``count`` accepted standard normals for ``(seed, path)``."""
    state0 = (int(seed) & MASK64) ^ fnv1a64(path)
    values = []
    pair = 0
    while len(values) < count:
        need = count - len(values)
        pairs = need // 2 + need // 32 + 8
        for z in _normals(state0, pair, pairs):
            if abs(z) <= TRUNCATE:
                values.append(z)
        pair += pairs
    return np.array(values[:count], dtype=np.float64)


def init_params(shape, seed, std=DEFAULT_STD, path=""):
    """Truncated-normal tensor, a pure function of ``(shape, seed, std, path)``."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    shape = tuple(int(s) for s in shape)
    n = math.prod(shape)
    return (std * truncated_normal_stream(seed, path, n)).reshape(shape)
