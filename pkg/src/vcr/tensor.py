"""Dense float64 kernel shared by every other module.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
The helpers here validate shapes and finiteness at the boundaries;
hot loops elsewhere use ``@`` directly.
"""

import hashlib

import numpy as np
from scipy.special import expit

DTYPE = np.float64


def vector(data):
    v = np.asarray(data, dtype=DTYPE)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"vector must be 1-d and non-empty, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def matrix(data):
    m = np.asarray(data, dtype=DTYPE)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"matrix must be 2-d and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def zeros(rows, cols=None):
    if cols is None:
        return np.zeros(rows, dtype=DTYPE)
    return np.zeros((rows, cols), dtype=DTYPE)


def identity(n):
    return np.eye(n, dtype=DTYPE)


def matvec(m, v):
    """Matrix-vector product with a fixed left-to-right summation order.

    Accumulates column by column, so each output coordinate equals
    ``((m[i,0]*v[0] + m[i,1]*v[1]) + ...)`` exactly. ``v`` may also be a
    batch of shape (B, cols), giving a (B, rows) result.
    """
    if m.ndim != 2 or v.shape[-1] != m.shape[1]:
        raise ValueError(
            f"matvec shape mismatch: matrix {m.shape} vs vector {v.shape}"
        )
    out = np.zeros(v.shape[:-1] + (m.shape[0],), dtype=DTYPE)
    for j in range(m.shape[1]):
        out += m[:, j] * v[..., j, None]
    return out


def _floating(x):
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(DTYPE)


def sigmoid(x):
    return expit(_floating(x))


def tanh(x):
    return np.tanh(_floating(x))


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh}


def elementwise(f, v):
    try:
        fn = _ELEMENTWISE[f] if isinstance(f, str) else f
    except KeyError:
        raise ValueError(f"unknown nonlinearity {f!r}") from None
    return fn(v)


class Rng:
    """Seeded counter-based generator (Philox).

    ``split(name)`` derives an independent child stream keyed on a purpose
    string, so initialization and data shuffling never share draws.
    """

    def __init__(self, seed, _key=()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, name):
        word = int.from_bytes(hashlib.blake2b(str(name).encode(), digest_size=8).digest(), "little")
        return Rng(self.seed, self._key + (word,))

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)


def init_uniform(rng, rows, cols, scale):
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if rows <= 0 or cols <= 0:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    return rng.uniform(-scale, scale, size=(rows, cols)).astype(DTYPE)
