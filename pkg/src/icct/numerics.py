"""Dense float64 helpers and seeded randomness.

Matrices are plain ``numpy.ndarray`` objects of dtype float64, row-major (C order).
Randomness comes from numpy's PCG64 bit generator; normal variates use
``Generator.standard_normal`` (ziggurat), which numpy keeps stream-stable
across platforms for a given numpy version.
"""

import numpy as np

from icct.errors import ConfigError, NumericError

DTYPE = np.float64


def as_matrix(x, ndim=2):
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def make_rng(seed):
    """Return a PCG64-backed generator for an unsigned 64-bit seed."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def stable_softmax(v, axis=-1):
    """Softmax with max-subtraction. Works on a flat vector or along ``axis``."""
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise ConfigError("softmax of an empty vector")
    if np.isnan(v).any():
        raise NumericError("NaN in softmax input")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=DTYPE)
    if np.isnan(v).any():
        raise NumericError("NaN in softmax input")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def rng_normal(rng, n, mean=0.0, stddev=1.0):
    if stddev < 0:
        raise ConfigError(f"stddev must be >= 0, got {stddev}")
    return mean + stddev * rng.standard_normal(int(n))
