"""Deterministic tensor and Fourier substrate.

Latent grids are float64 arrays of shape (C, H, W); complex grids are
complex128 arrays of shape (H, W).  FFT convention: unnormalized forward
transform, 1/(H*W) on the inverse.  Only power-of-two planes are supported.
"""
from typing import NamedTuple

import numpy as np

from ringlab import backend
from ringlab.errors import InvalidArgument, UnsupportedSize


class RngStream:
    """Counter-based Gaussian stream keyed by (seed, stream_id).

    Backed by numpy's Philox4x64 bit generator with the 128-bit key
    ``[seed, stream_id]`` and counter starting at zero, so each pair names an
    independent, platform-stable sequence.  Draws advance the stream.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed, stream_id=0):
        seed, stream_id = int(seed), int(stream_id)
        for name, value in (("seed", seed), ("stream_id", stream_id)):
            if not 0 <= value < 2**64:
                raise InvalidArgument(f"{name} must fit in an unsigned 64-bit integer, got {value}")
        self.seed = seed
        self.stream_id = stream_id
        key = np.array([seed, stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def normal(self, shape):
        return self._gen.standard_normal(shape)

    def integers(self, high):
        return int(self._gen.integers(high))


class Norms(NamedTuple):
    l1: float
    l2sq: float
    linf: float


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def as_latent(x):
    """Validate and return ``x`` as a finite float64 (C, H, W) array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise InvalidArgument(f"latent grid must have shape (C, H, W) with positive extents, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("latent grid contains non-finite entries")
    return x


def sample_gaussian(rng, channels, height, width):
    if min(channels, height, width) < 1:
        raise InvalidArgument("grid dimensions must be >= 1")
    return rng.normal((channels, height, width))


def _check_plane(plane):
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise InvalidArgument(f"expected a 2-D plane, got shape {plane.shape}")
    h, w = plane.shape
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise UnsupportedSize(f"plane dimensions must be powers of two, got {h}x{w}")
    return plane


def _transform2(plane, inverse):
    a = np.ascontiguousarray(plane, dtype=np.complex128).copy()
    backend.fft_rows(a, inverse)
    t = np.ascontiguousarray(a.T)
    backend.fft_rows(t, inverse)
    return np.ascontiguousarray(t.T)


def fft2(plane):
    """Unnormalized forward 2-D DFT of a single (H, W) plane."""
    return _transform2(_check_plane(plane), inverse=False)


def ifft2(spectrum):
    """Inverse 2-D DFT with 1/(H*W) normalization; ``ifft2(fft2(x)) == x``."""
    spectrum = _check_plane(spectrum)
    out = _transform2(spectrum, inverse=True)
    out /= spectrum.shape[0] * spectrum.shape[1]
    return out


def fftshift(grid):
    """Move the DC bin from (0, 0) to (H//2, W//2)."""
    return np.fft.fftshift(np.asarray(grid), axes=(-2, -1))


def ifftshift(grid):
    return np.fft.ifftshift(np.asarray(grid), axes=(-2, -1))


def norms(grid):
    """L1, squared L2 and L-infinity norms; complex entries contribute their modulus."""
    mod = np.abs(np.asarray(grid)).ravel()
    if mod.size == 0:
        return Norms(0.0, 0.0, 0.0)
    return Norms(float(mod.sum()), float(np.dot(mod, mod)), float(mod.max()))
