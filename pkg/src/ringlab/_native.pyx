# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: radix-2 row FFT and fused mixture projections."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, M_PI

cnp.import_array()

_plans = {}


def _plan(Py_ssize_t n):
    """Bit-reversal permutation and cos/sin twiddle table for size n."""
    plan = _plans.get(n)
    if plan is None:
        bits = n.bit_length() - 1
        rev = np.zeros(n, dtype=np.intp)
        idx = np.arange(n)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        k = np.arange(n // 2)
        plan = (rev, np.cos(2.0 * np.pi * k / n), np.sin(2.0 * np.pi * k / n))
        _plans[n] = plan
    return plan


def fft_rows(a, bint inverse=False):
    """Unnormalized iterative radix-2 DIT transform of every row, in place.

    ``a`` is a C-contiguous complex128 (rows, n) array, n a power of two.
    """
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1]
    if n <= 1:
        return a
    rev_arr, cos_arr, sin_arr = _plan(n)
    cdef double[:, ::1] v = a.view(np.float64)
    cdef Py_ssize_t[::1] rev = rev_arr
    cdef double[::1] tc = cos_arr
    cdef double[::1] ts = sin_arr
    cdef double sign = 1.0 if inverse else -1.0
    cdef Py_ssize_t r, i, j, k, m, start, stride, p, q
    cdef double wr, wi, ur, ui, xr, xi, tr, ti
    with nogil:
        for r in range(rows):
            for i in range(n):
                j = rev[i]
                if j > i:
                    tr = v[r, 2 * i]; ti = v[r, 2 * i + 1]
                    v[r, 2 * i] = v[r, 2 * j]; v[r, 2 * i + 1] = v[r, 2 * j + 1]
                    v[r, 2 * j] = tr; v[r, 2 * j + 1] = ti
            m = 1
            while m < n:
                stride = n // (2 * m)
                for k in range(m):
                    wr = tc[k * stride]
                    wi = sign * ts[k * stride]
                    start = 0
                    while start < n:
                        p = 2 * (start + k)
                        q = p + 2 * m
                        xr = v[r, q]; xi = v[r, q + 1]
                        tr = wr * xr - wi * xi
                        ti = wr * xi + wi * xr
                        ur = v[r, p]; ui = v[r, p + 1]
                        v[r, p] = ur + tr; v[r, p + 1] = ui + ti
                        v[r, q] = ur - tr; v[r, q + 1] = ui - ti
                        start += 2 * m
                m *= 2
    return a


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # one accumulator per lane so the compiler can vectorize without reassociating;
    # lanes are combined in a fixed order, keeping results run-to-run identical
    cdef double acc[8]
    cdef Py_ssize_t i, j, n8 = n - n % 8
    for j in range(8):
        acc[j] = 0.0
    for i in range(0, n8, 8):
        for j in range(8):
            acc[j] += a[i + j] * b[i + j]
    for i in range(n8, n):
        acc[0] += a[i] * b[i]
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))


def mixture_project(const double[:, ::1] templates, const double[::1] x):
    """Return (templates @ x, x @ x)."""
    cdef Py_ssize_t K = templates.shape[0], d = templates.shape[1], k
    dots = np.zeros(K, dtype=np.float64)
    cdef double[::1] dv = dots
    cdef double xx
    cdef const double* xp = &x[0]
    with nogil:
        xx = _dot(xp, xp, d)
        for k in range(K):
            dv[k] = _dot(&templates[k, 0], xp, d)
    return dots, xx


def mixture_combine(const double[:, ::1] templates, const double[::1] x,
                    double alpha, const double[::1] coeffs):
    """Return alpha * x + coeffs @ templates, one pass over the output per block."""
    cdef Py_ssize_t K = templates.shape[0], d = templates.shape[1], k, i, lo = 0, hi
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double* op = &ov[0]
    cdef const double* xp = &x[0]
    cdef const double* tp
    cdef double c
    with nogil:
        while lo < d:
            hi = lo + 1024 if lo + 1024 < d else d
            for i in range(lo, hi):
                op[i] = alpha * xp[i]
            for k in range(K):
                c = coeffs[k]
                if c == 0.0:
                    continue
                tp = &templates[k, 0]
                for i in range(lo, hi):
                    op[i] += c * tp[i]
            lo = hi
    return out
