"""Tree-ring mask and key construction, Fourier-space embedding and key recovery.

All spectra here live in the fftshifted frame: index (H//2, W//2) holds the DC
bin.  A key is a complex value per masked position, constant on each integer
ring ``floor(distance to center)``.
"""
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ringlab import latentio
from ringlab.errors import InvalidArgument
from ringlab.grid import as_latent, fft2, fftshift, ifft2, ifftshift

RING_CONSTANT = "ring-constant"
HERMITIAN = "hermitian-ring-constant"
PATTERNS = (RING_CONSTANT, HERMITIAN)

# "dc": rings centered on the DC bin, so the mask is closed under frequency
# negation and hermitian keys embed losslessly.  "geometric": centered on
# ((H-1)/2, (W-1)/2) of the shifted plane; only usable with ring-constant keys.
CENTERS = ("dc", "geometric")


@dataclass(frozen=True, eq=False)
class RingMask:
    height: int
    width: int
    radius: float
    channel: int
    center: str
    member: np.ndarray  # bool (H, W), shifted frame
    distance: np.ndarray  # float (H, W), distance of each pixel to the center

    @property
    def ring_index(self):
        return np.floor(self.distance).astype(np.intp)

    @property
    def size(self):
        return int(self.member.sum())

    @property
    def n_rings(self):
        return int(self.ring_index[self.member].max()) + 1

    def mirror(self, plane):
        """Map a shifted-frame plane through frequency negation f -> -f."""
        rows = (-np.arange(self.height)) % self.height
        cols = (-np.arange(self.width)) % self.width
        # shifted index i has frequency i - H//2; its negation sits at H - i (mod H)
        return fftshift(ifftshift(plane)[rows][:, cols])

    @property
    def is_symmetric(self):
        return bool(np.array_equal(self.member, self.mirror(self.member)))


def make_ring_mask(height, width, radius, channel=0, center="dc", channels=None):
    if center not in CENTERS:
        raise InvalidArgument(f"center must be one of {CENTERS}, got {center!r}")
    if radius < 0 or radius >= min(height, width) / 2:
        raise InvalidArgument(f"radius {radius} outside [0, {min(height, width) / 2})")
    if channel < 0 or (channels is not None and channel >= channels):
        raise InvalidArgument(f"channel {channel} out of range")
    if center == "dc":
        cy, cx = height // 2, width // 2
    else:
        cy, cx = (height - 1) / 2, (width - 1) / 2
    rows, cols = np.mgrid[:height, :width]
    distance = np.hypot(rows - cy, cols - cx)
    member = distance <= radius
    if not member.any():
        raise InvalidArgument(f"radius {radius} selects no pixels")
    return RingMask(int(height), int(width), float(radius), int(channel), center, member, distance)


@dataclass(frozen=True, eq=False)
class WatermarkKey:
    values: np.ndarray  # complex (H, W), shifted frame, zero off-mask
    ring_values: np.ndarray  # complex (n_rings,)
    seed: int
    pattern: str

    def masked(self, mask):
        return self.values[mask.member]


def _positive_half(mask):
    """True where the signed frequency (fy, fx) is lexicographically above zero."""
    fy = np.arange(mask.height)[:, None] - mask.height // 2
    fx = np.arange(mask.width)[None, :] - mask.width // 2
    return (fy > 0) | ((fy == 0) & (fx > 0))


def make_ring_key(mask, rng, pattern=HERMITIAN):
    """Draw one complex value per integer ring and paint it over the mask.

    Real and imaginary parts are N(0, H*W/2), matching the per-coefficient
    scale of the unnormalized FFT of unit white noise.  The hermitian pattern
    writes the conjugate value on the negative-frequency half and keeps only
    the real part on self-conjugate bins, so the embedded plane stays real.
    """
    if pattern not in PATTERNS:
        raise InvalidArgument(f"pattern must be one of {PATTERNS}, got {pattern!r}")
    if mask.size == 0:
        raise InvalidArgument("empty mask")
    scale = np.sqrt(mask.height * mask.width / 2.0)
    draws = rng.normal((mask.n_rings, 2)) * scale
    ring_values = draws[:, 0] + 1j * draws[:, 1]
    painted = np.where(mask.member, ring_values[np.minimum(mask.ring_index, mask.n_rings - 1)], 0)
    if pattern == HERMITIAN:
        if mask.center != "dc" or not mask.is_symmetric:
            raise InvalidArgument("hermitian keys need a mask closed under frequency negation (center='dc')")
        positive = _positive_half(mask)
        flat = np.arange(mask.height * mask.width).reshape(mask.height, mask.width)
        self_conjugate = mask.mirror(flat) == flat
        painted = np.where(positive, painted, np.conj(painted))
        painted = np.where(self_conjugate, painted.real, painted)
        painted = np.where(mask.member, painted, 0)
    return WatermarkKey(painted.astype(np.complex128), ring_values, rng.seed, pattern)


def _check_latent_mask(x, mask):
    x = as_latent(x)
    c, h, w = x.shape
    if (h, w) != (mask.height, mask.width):
        raise InvalidArgument(f"mask is {mask.height}x{mask.width}, latent plane is {h}x{w}")
    if mask.channel >= c:
        raise InvalidArgument(f"mask channel {mask.channel} >= latent channels {c}")
    return x


def embed(x_T, key, mask):
    """Overwrite the masked shifted spectrum of channel ``mask.channel`` with the key."""
    x = _check_latent_mask(x_T, mask).copy()
    if key.values.shape != mask.member.shape:
        raise InvalidArgument("key and mask dimensions differ")
    spectrum = fftshift(fft2(x[mask.channel]))
    spectrum[mask.member] = key.values[mask.member]
    x[mask.channel] = ifft2(ifftshift(spectrum)).real
    return x


def recover_key(x_hat, mask):
    """Masked shifted spectrum of the watermark channel, in row-major mask order."""
    x = _check_latent_mask(x_hat, mask)
    return fftshift(fft2(x[mask.channel]))[mask.member]


class ExtractionMetrics(NamedTuple):
    mean_l1: float
    nmae: float
    nmse: float


def mean_l1_distance(w_hat, w):
    diff = np.abs(np.asarray(w_hat) - np.asarray(w))
    if diff.size == 0:
        raise InvalidArgument("empty masked vectors")
    return float(diff.mean())


def extraction_metrics(w_hat, w):
    w_hat = np.asarray(w_hat, dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    if w_hat.shape != w.shape:
        raise InvalidArgument(f"shape mismatch {w_hat.shape} vs {w.shape}")
    diff = np.abs(w_hat - w)
    mod = np.abs(w)
    l1_ref = mod.sum()
    l2_ref = np.dot(mod, mod)
    if l1_ref == 0:
        raise ZeroDivisionError("reference key is all zero; nmae/nmse undefined")
    return ExtractionMetrics(
        mean_l1=float(diff.mean()),
        nmae=float(diff.sum() / l1_ref),
        nmse=float(np.dot(diff, diff) / l2_ref),
    )


def save_watermark(prefix, key, mask):
    """Write ``<prefix>.mask.rlt``, ``<prefix>.key.rlc`` and the ``<prefix>.json`` sidecar."""
    latentio.save_latent(f"{prefix}.mask.rlt", mask.member.astype(np.float64)[None])
    latentio.save_complex(f"{prefix}.key.rlc", key.values[None])
    meta = {
        "seed": key.seed,
        "pattern": key.pattern,
        "radius": mask.radius,
        "channel": mask.channel,
        "center": mask.center,
        "height": mask.height,
        "width": mask.width,
        "ring_values": [[v.real, v.imag] for v in key.ring_values],
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_watermark(prefix):
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    mask = make_ring_mask(meta["height"], meta["width"], meta["radius"], meta["channel"], meta["center"])
    stored = latentio.load(f"{prefix}.mask.rlt")[0] > 0.5
    if not np.array_equal(stored, mask.member):
        raise InvalidArgument(f"{prefix}.mask.rlt disagrees with sidecar parameters")
    values = latentio.load(f"{prefix}.key.rlc")[0]
    ring_values = np.array([complex(re, im) for re, im in meta["ring_values"]])
    return WatermarkKey(values, ring_values, meta["seed"], meta["pattern"]), mask
