"""Latent-space perturbations applied to generated samples before inversion."""
from dataclasses import dataclass

import numpy as np

from ringlab.errors import InvalidArgument
from ringlab.grid import RngStream, as_latent

KINDS = ("none", "gaussian_blur", "additive_noise")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    sigma: float = 0.0
    kernel_radius: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            raise InvalidArgument(f"attack sigma must be >= 0, got {self.sigma}")
        if self.kind == "gaussian_blur" and (self.kernel_radius < 1 or self.sigma == 0):
            raise InvalidArgument("blur needs kernel_radius >= 1 and sigma > 0")

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def blur(cls, sigma=1.0, kernel_radius=2):
        return cls("gaussian_blur", sigma, kernel_radius)

    @classmethod
    def noise(cls, sigma=0.1, seed=0):
        return cls("additive_noise", sigma, seed=seed)

    @property
    def tag(self):
        if self.kind == "none":
            return "none"
        if self.kind == "gaussian_blur":
            return f"blur(sigma={self.sigma:g},r={self.kernel_radius})"
        return f"noise(sigma={self.sigma:g})"

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind != "none":
            out["sigma"] = self.sigma
        if self.kind == "gaussian_blur":
            out["kernel_radius"] = self.kernel_radius
        if self.kind == "additive_noise":
            out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidArgument(f"attack must be an object, got {d!r}")
        unknown = set(d) - {"kind", "sigma", "kernel_radius", "seed"}
        if unknown:
            raise InvalidArgument(f"unknown attack fields {sorted(unknown)}")
        return cls(
            d.get("kind", "none"),
            float(d.get("sigma", 0.0)),
            int(d.get("kernel_radius", 2)),
            int(d.get("seed", 0)),
        )


def gaussian_kernel_1d(sigma, radius):
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-offsets**2 / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(x, sigma, radius):
    """Per-channel separable Gaussian blur with reflect padding (edge sample not repeated)."""
    k = gaussian_kernel_1d(sigma, radius)
    c, h, w = x.shape
    if radius >= min(h, w):
        raise InvalidArgument(f"kernel radius {radius} too large for a {h}x{w} plane")
    padded = np.pad(x, ((0, 0), (radius, radius), (radius, radius)), mode="reflect")
    rows = sum(k[j] * padded[:, j:j + h, :] for j in range(2 * radius + 1))
    return sum(k[j] * rows[:, :, j:j + w] for j in range(2 * radius + 1))


def apply_attack(x, spec, rng=None):
    """Apply ``spec`` to latent ``x``; noise draws from ``rng`` or the spec's own seed."""
    x = as_latent(x)
    if spec.kind == "none":
        return x.copy()
    if spec.kind == "gaussian_blur":
        return gaussian_blur(x, spec.sigma, spec.kernel_radius)
    rng = rng or RngStream(spec.seed, 0)
    return x + spec.sigma * rng.normal(x.shape)
