"""Bit-exact latent file format.

Real grids:    b"RLT1" | u32 C | u32 H | u32 W | C*H*W float64, all little-endian, row-major.
Complex grids: b"RLC1" | u32 C | u32 H | u32 W | real grid data | imaginary grid data.
"""
import os
import struct

import numpy as np

from ringlab.errors import InvalidArgument

REAL_MAGIC = b"RLT1"
COMPLEX_MAGIC = b"RLC1"
_HEADER = struct.Struct("<4sIII")
_F64 = np.dtype("<f8")


def _shape3(arr):
    if arr.ndim == 2:
        return (1,) + arr.shape
    if arr.ndim == 3:
        return arr.shape
    raise InvalidArgument(f"expected a 2-D or 3-D grid, got shape {arr.shape}")


def encode_real(grid):
    arr = np.asarray(grid, dtype=np.float64)
    c, h, w = _shape3(arr)
    return _HEADER.pack(REAL_MAGIC, c, h, w) + arr.astype(_F64).tobytes(order="C")


def encode_complex(grid):
    arr = np.asarray(grid, dtype=np.complex128)
    c, h, w = _shape3(arr)
    body = arr.real.astype(_F64).tobytes(order="C") + arr.imag.astype(_F64).tobytes(order="C")
    return _HEADER.pack(COMPLEX_MAGIC, c, h, w) + body


def decode(data):
    """Decode either format; complex payloads come back as complex128 (C, H, W)."""
    if len(data) < _HEADER.size:
        raise InvalidArgument("truncated latent file header")
    magic, c, h, w = _HEADER.unpack_from(data)
    n = c * h * w
    if magic == REAL_MAGIC:
        expected = n
    elif magic == COMPLEX_MAGIC:
        expected = 2 * n
    else:
        raise InvalidArgument(f"unknown latent file magic {magic!r}")
    payload = np.frombuffer(data, dtype=_F64, offset=_HEADER.size)
    if payload.size != expected:
        raise InvalidArgument(f"latent payload holds {payload.size} values, header implies {expected}")
    payload = payload.astype(np.float64)
    if magic == REAL_MAGIC:
        return payload.reshape(c, h, w)
    return (payload[:n] + 1j * payload[n:]).reshape(c, h, w)


def _write(path, payload):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(payload)


def save_latent(path, grid):
    _write(path, encode_real(grid))


def save_complex(path, grid):
    _write(path, encode_complex(grid))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
