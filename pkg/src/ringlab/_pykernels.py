"""Pure-numpy implementations of the hot kernels.

Used whenever the compiled ``_native`` extension is unavailable, and as the
reference side of the kernel benchmark.  Signatures mirror ``_native.pyx``.
"""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def bit_reverse_permutation(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m, inverse):
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 1j * np.pi * np.arange(m) / m)


def fft_rows(a, inverse=False):
    """Unnormalized iterative radix-2 DIT transform of every row of ``a``, in place.

    ``a`` must be a C-contiguous complex128 array of shape (rows, n) with n a
    power of two.
    """
    rows, n = a.shape
    if n == 1:
        return a
    work = a[:, bit_reverse_permutation(n)]
    m = 1
    while m < n:
        blocks = work.reshape(rows, n // (2 * m), 2, m)
        even = blocks[:, :, 0, :]
        odd = blocks[:, :, 1, :] * _twiddles(m, inverse)
        work = np.concatenate((even + odd, even - odd), axis=2)
        m *= 2
    a[...] = work.reshape(rows, n)
    return a


def mixture_project(templates, x):
    """Return (templates @ x, x @ x)."""
    return templates @ x, float(x @ x)


def mixture_combine(templates, x, alpha, coeffs):
    """Return alpha * x + coeffs @ templates."""
    out = coeffs @ templates
    out += alpha * x
    return out
