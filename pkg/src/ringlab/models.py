"""Closed-form stand-ins for the rectified-flow velocity and DDIM noise predictors.

Data are drawn from an isotropic Gaussian mixture,
``x0 ~ sum_k p_k N(mu_k, sigma_k^2 I)``.  Both generative processes observe
``x = a*x0 + b*eps`` with ``eps ~ N(0, I)``: rectified flow uses
``(a, b) = (1 - t, t)``, DDIM uses ``(sqrt(abar), sqrt(1 - abar))``.  The
posterior means E[x0 | x] and E[eps | x] are exact, so the velocity field
``E[eps - x0 | x]`` and the noise predictor ``E[eps | x]`` are too.
"""
import json
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ringlab import backend, latentio
from ringlab.errors import InvalidArgument, SingularityError
from ringlab.grid import RngStream, fft2, ifft2, is_power_of_two

SIGMA_MIN = 1e-3
MODEL_SCHEMA = "ringlab.model/1"


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule; ``alpha_bar[0] == 1`` marks the clean endpoint."""

    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.steps < 1 or not 0 < self.beta_start <= self.beta_end < 1:
            raise InvalidArgument(f"invalid noise schedule {self}")

    @cached_property
    def betas(self):
        return np.linspace(self.beta_start, self.beta_end, self.steps)

    @cached_property
    def alpha_bars(self):
        return np.concatenate(([1.0], np.cumprod(1.0 - self.betas)))

    def alpha_bar(self, t):
        if not 0 <= t <= self.steps:
            raise InvalidArgument(f"step index {t} outside [0, {self.steps}]")
        return float(self.alpha_bars[t])

    def continuous_alpha_bar(self, tau):
        """Continuous-time limit of the schedule for tau in [0, 1]."""
        tau = np.asarray(tau, dtype=np.float64)
        integral = self.beta_start * tau + 0.5 * (self.beta_end - self.beta_start) * tau**2
        return np.exp(-self.steps * integral)


@dataclass(frozen=True)
class Condition:
    """Prompt analog: ``exact(k)``, ``null()`` or ``perturbed(k, eta)``."""

    kind: str
    index: int = -1
    eta: float = 0.0

    @classmethod
    def exact(cls, k):
        return cls("exact", int(k))

    @classmethod
    def null(cls):
        return cls("null")

    @classmethod
    def perturbed(cls, k, eta):
        if not 0.0 <= eta <= 1.0:
            raise InvalidArgument(f"eta must lie in [0, 1], got {eta}")
        return cls("perturbed", int(k), float(eta))


class MixtureModel:
    """Isotropic Gaussian mixture with exact RF velocity and DDIM noise prediction.

    Parameters
    ----------
    templates : array_like, shape (K, C, H, W)
        Component means.
    scales : array_like, shape (K,)
        Per-component standard deviations.
    priors : array_like, shape (K,)
        Mixture weights; must be positive and sum to one.
    schedule : NoiseSchedule
    allow_deterministic : bool
        Permit scales below ``SIGMA_MIN`` (point masses), for unit tests.
    """

    def __init__(self, templates, scales, priors, schedule=None, allow_deterministic=False):
        templates = np.asarray(templates, dtype=np.float64)
        if templates.ndim != 4:
            raise InvalidArgument(f"templates must have shape (K, C, H, W), got {templates.shape}")
        k = templates.shape[0]
        scales = np.asarray(scales, dtype=np.float64).reshape(-1)
        priors = np.asarray(priors, dtype=np.float64).reshape(-1)
        if scales.shape != (k,) or priors.shape != (k,):
            raise InvalidArgument("scales and priors need one entry per component")
        if np.any(priors <= 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise InvalidArgument("priors must be positive and sum to 1")
        floor = 0.0 if allow_deterministic else SIGMA_MIN
        if np.any(scales < floor):
            raise InvalidArgument(f"component scales must be >= {floor}")
        if not np.all(np.isfinite(templates)):
            raise InvalidArgument("templates contain non-finite values")
        self.shape = templates.shape[1:]
        self.templates = np.ascontiguousarray(templates.reshape(k, -1))
        self.template_sq = np.einsum("kd,kd->k", self.templates, self.templates)
        self.scales = scales
        self.priors = priors
        self.schedule = schedule or NoiseSchedule()
        self.templates.flags.writeable = False

    @property
    def n_components(self):
        return self.templates.shape[0]

    @property
    def dim(self):
        return self.templates.shape[1]

    def condition_weights(self, cond):
        if cond.kind == "null":
            return self.priors.copy()
        if not 0 <= cond.index < self.n_components:
            raise InvalidArgument(f"component index {cond.index} out of range")
        onehot = np.zeros(self.n_components)
        onehot[cond.index] = 1.0
        if cond.kind == "exact":
            return onehot
        if cond.kind == "perturbed":
            return (1.0 - cond.eta) * onehot + cond.eta * self.priors
        raise InvalidArgument(f"unknown condition kind {cond.kind!r}")

    # -- posterior core -------------------------------------------------------

    def _flat(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise InvalidArgument(f"latent shape {x.shape} does not match model shape {self.shape}")
        return np.ascontiguousarray(x.reshape(-1))

    def _loglik(self, x, a, b):
        """Per-component log N(x; a*mu_k, u_k I) up to a shared constant, and u_k."""
        u = a * a * self.scales**2 + b * b
        if np.any(u <= 0):
            raise SingularityError("zero observation variance (deterministic component at the data endpoint)")
        dots, xx = backend.mixture_project(self.templates, x)
        sq = xx - 2.0 * a * dots + a * a * self.template_sq
        return -0.5 * self.dim * np.log(u) - 0.5 * sq / u, u, dots

    @staticmethod
    def responsibilities(loglik, weights):
        """Softmax of ``loglik + log(weights)`` over components with positive weight."""
        logits = np.full_like(loglik, -np.inf)
        live = weights > 0
        logits[live] = loglik[live] + np.log(weights[live])
        logits -= logits.max()
        r = np.exp(logits)
        # subnormal weights contribute nothing measurable but slow every product
        r[r < 1e-200] = 0.0
        return r / r.sum()

    def _means(self, x, a, b, r, u):
        """E[x0|x] and E[eps|x] as (scalar on x, coefficients on templates)."""
        s2 = self.scales**2
        x0 = (float(np.dot(r, a * s2 / u)), r * (b * b / u))
        eps = (float(np.dot(r, b / u)), -r * (a * b / u))
        return x0, eps

    def posterior(self, x, a, b, weights):
        """Exact (E[x0|x], E[eps|x], responsibilities) for ``x = a*x0 + b*eps``."""
        xf = self._flat(x)
        loglik, u, _ = self._loglik(xf, a, b)
        r = self.responsibilities(loglik, np.asarray(weights, dtype=np.float64))
        (ax, cx), (ae, ce) = self._means(xf, a, b, r, u)
        x0 = backend.mixture_combine(self.templates, xf, ax, cx).reshape(self.shape)
        eps = backend.mixture_combine(self.templates, xf, ae, ce).reshape(self.shape)
        return x0, eps, r

    def _guided_coeffs(self, xf, a, b, cond, scale, target):
        """Affine coefficients of the guided ``target`` ('velocity' or 'eps') at ``xf``."""
        loglik, u, _ = self._loglik(xf, a, b)

        def coeffs(weights):
            r = self.responsibilities(loglik, weights)
            (ax, cx), (ae, ce) = self._means(xf, a, b, r, u)
            if target == "velocity":
                return ae - ax, ce - cx
            return ae, ce

        null_alpha, null_c = coeffs(self.priors)
        if cond.kind == "null" or scale == 0.0:
            return null_alpha, null_c
        cond_alpha, cond_c = coeffs(self.condition_weights(cond))
        return (
            null_alpha + scale * (cond_alpha - null_alpha),
            null_c + scale * (cond_c - null_c),
        )

    def guided_velocity(self, x, t, cond, scale=1.0):
        """Classifier-free-guided RF velocity at time ``t`` in [0, 1]."""
        if not 0.0 <= t <= 1.0:
            raise InvalidArgument(f"time {t} outside [0, 1]")
        xf = self._flat(x)
        alpha, c = self._guided_coeffs(xf, 1.0 - t, t, cond, scale, "velocity")
        return backend.mixture_combine(self.templates, xf, alpha, c).reshape(self.shape)

    def guided_eps(self, x, alpha_bar, cond, scale=1.0):
        """Classifier-free-guided noise prediction at noise level ``alpha_bar`` in (0, 1)."""
        if not 0.0 < alpha_bar < 1.0:
            raise InvalidArgument(f"alpha_bar {alpha_bar} outside (0, 1)")
        xf = self._flat(x)
        alpha, c = self._guided_coeffs(xf, np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar), cond, scale, "eps")
        return backend.mixture_combine(self.templates, xf, alpha, c).reshape(self.shape)

    def guided_eps_jvp(self, x, alpha_bar, cond, scale, v):
        """Directional derivative of ``guided_eps`` at ``x`` along ``v``.

        Uses d E[x0|x] / dx = sum_k r_k c_k I + sum_k r_k m_k (g_k - g_bar)^T with
        g_k = -(x - a mu_k) / u_k, and E[eps|x] = (x - a E[x0|x]) / b.
        """
        a, b = np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar)
        xf, vf = self._flat(x), self._flat(v)
        loglik, u, dots = self._loglik(xf, a, b)
        vdots, _ = backend.mixture_project(self.templates, vf)
        xv = float(np.dot(xf, vf))
        gv = -(xv - a * vdots) / u
        s2 = self.scales**2

        def x0_jvp(weights):
            r = self.responsibilities(loglik, weights)
            delta = r * (gv - np.dot(r, gv))
            c = a * s2 / u
            # sum_k delta_k * m_k with m_k = c_k x + (b^2/u_k) mu_k
            alpha_v = float(np.dot(r, c))
            alpha_x = float(np.dot(delta, c))
            return alpha_v, alpha_x, delta * (b * b / u)

        null = x0_jvp(self.priors)
        if cond.kind == "null" or scale == 0.0:
            av, axx, cm = null
        else:
            cnd = x0_jvp(self.condition_weights(cond))
            av, axx, cm = (n + scale * (c - n) for n, c in zip(null, cnd))
        jx0 = backend.mixture_combine(self.templates, vf, av, cm) + axx * xf
        return ((vf - a * jx0) / b).reshape(self.shape)

    # -- construction -------------------------------------------------------------

    @classmethod
    def low_frequency(cls, shape=(4, 64, 64), n_components=8, scale=0.05, seed=2024,
                      cutoff=4.0, amplitude=1.0, schedule=None):
        """Mixture whose templates are smooth random patterns, see ``low_frequency_template``."""
        templates = [low_frequency_template(shape, RngStream(seed, k), cutoff, amplitude)
                     for k in range(n_components)]
        priors = np.full(n_components, 1.0 / n_components)
        return cls(np.stack(templates), np.full(n_components, scale), priors, schedule)

    @classmethod
    def from_dict(cls, spec, base_dir="."):
        if spec.get("schema", MODEL_SCHEMA) != MODEL_SCHEMA:
            raise InvalidArgument(f"unsupported model schema {spec.get('schema')!r}")
        shape = tuple(int(v) for v in spec["shape"])
        if len(shape) != 3 or not all(is_power_of_two(v) for v in shape[1:]):
            raise InvalidArgument(f"model shape must be (C, H, W) with power-of-two planes, got {shape}")
        gen = spec.get("templates", {})
        seed = int(gen.get("seed", 2024))
        cutoff = float(gen.get("cutoff", 4.0))
        amplitude = float(gen.get("amplitude", 1.0))
        templates, scales, priors = [], [], []
        for k, comp in enumerate(spec["components"]):
            if "template_file" in comp:
                grid = latentio.load(os.path.join(base_dir, comp["template_file"]))
                if np.iscomplexobj(grid) or grid.shape != shape:
                    raise InvalidArgument(f"template file for component {k} has wrong type or shape")
            else:
                stream = RngStream(int(comp.get("template_seed", seed)), int(comp.get("template_stream", k)))
                grid = low_frequency_template(shape, stream, cutoff, amplitude)
            templates.append(grid)
            scales.append(float(comp["scale"]))
            priors.append(float(comp["prior"]))
        sched = NoiseSchedule(**spec.get("schedule", {}))
        return cls(np.stack(templates), scales, priors, sched)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            spec = json.load(fh)
        return cls.from_dict(spec, base_dir=os.path.dirname(os.path.abspath(path)))


def default_model_spec(shape=(4, 64, 64), n_components=8, scale=0.05, seed=2024):
    return {
        "schema": MODEL_SCHEMA,
        "shape": list(shape),
        "templates": {"seed": seed, "cutoff": 4.0, "amplitude": 1.0},
        "components": [{"scale": scale, "prior": 1.0 / n_components} for _ in range(n_components)],
        "schedule": {"steps": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    }


def low_frequency_template(shape, rng, cutoff=4.0, amplitude=1.0):
    """White noise low-passed by a Gaussian envelope of ``cutoff`` cycles, scaled to RMS ``amplitude``."""
    c, h, w = shape
    fy = np.fft.fftfreq(h, 1.0 / h)[:, None]
    fx = np.fft.fftfreq(w, 1.0 / w)[None, :]
    envelope = np.exp(-(fx**2 + fy**2) / (2.0 * cutoff**2))
    noise = rng.normal(shape)
    out = np.stack([ifft2(fft2(plane) * envelope).real for plane in noise])
    return out * (amplitude / np.sqrt(np.mean(out**2)))


# -- spec-level functional surface ---------------------------------------------


def condition_weights(model, cond):
    return model.condition_weights(cond)


def rf_velocity(model, x, t, cond):
    """Unguided E[x1 - x0 | x_t = x] under the conditioned mixture."""
    return model.guided_velocity(x, t, cond, scale=1.0)


def ddim_eps(model, x, t, cond):
    """Unguided E[eps | x_t = x] at integer step ``t`` in [1, T]."""
    if not 1 <= t <= model.schedule.steps:
        raise InvalidArgument(f"step index {t} outside [1, {model.schedule.steps}]")
    return model.guided_eps(x, model.schedule.alpha_bar(t), cond, scale=1.0)


def cfg_combine(v_cond, v_null, scale):
    v_cond, v_null = np.asarray(v_cond), np.asarray(v_null)
    if v_cond.shape != v_null.shape:
        raise InvalidArgument(f"shape mismatch {v_cond.shape} vs {v_null.shape}")
    return v_null + scale * (v_cond - v_null)


def forward_noise(model, x0, t, rng):
    abar = model.schedule.alpha_bar(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
