"""Kernel backend selection.

The compiled ``_native`` extension is preferred.  Set ``RINGLAB_BACKEND=python``
to force the numpy fallback (results agree to rounding, not bit-for-bit).
``mixture_project`` stays on numpy in both modes: it is a matrix-vector product
and the BLAS behind numpy beats the compiled loop (benchmarks/bench_kernels.py).
"""
import os

from ringlab import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("RINGLAB_BACKEND", "").lower() != "python":
    try:
        from ringlab import _native
    except ImportError:  # extension not built
        pass
    else:
        kernels = _native
        BACKEND = "native"

fft_rows = kernels.fft_rows
mixture_project = _pykernels.mixture_project
mixture_combine = kernels.mixture_combine
