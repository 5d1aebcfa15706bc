"""Generation and inversion integrators for the rectified-flow and DDIM families.

Any object exposing ``guided_velocity(x, t, cond, scale)`` (rectified flow) or
``guided_eps(x, alpha_bar, cond, scale)`` (DDIM) can be integrated;
``MixtureModel`` provides both.  Rectified-flow time runs from 0 (data) to 1
(noise); DDIM grids are integer step indices with index 0 the clean endpoint.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ringlab.errors import InvalidArgument, InvalidState, NumericalDivergence


@dataclass(frozen=True)
class SolverConfig:
    steps: int = 28
    fp_max_iters: int = 50
    fp_tol: float = 1e-10
    gd_max_iters: int = 20
    gd_step: float = 0.1
    guidance_scale: float = 3.5
    gradient: str = "fd"  # "fd" (central differences) or "analytic"
    fd_eps: float = 1e-5
    line_search: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.fp_max_iters < 1 or self.gd_max_iters < 0:
            raise InvalidArgument(f"invalid solver counts in {self}")
        if self.fp_tol <= 0 or self.gd_step <= 0 or self.fd_eps <= 0:
            raise InvalidArgument("solver tolerances and step sizes must be positive")
        if self.gradient not in ("fd", "analytic"):
            raise InvalidArgument(f"gradient must be 'fd' or 'analytic', got {self.gradient!r}")

    @classmethod
    def rf(cls, **kw):
        return cls(**{"steps": 28, **kw})

    @classmethod
    def ddim(cls, **kw):
        return cls(**{"steps": 50, **kw})


@dataclass(frozen=True)
class TimeGrid:
    """Increasing grid t_0 < ... < t_N shared by generation and inversion."""

    points: tuple
    kind: str

    @classmethod
    def uniform_rf(cls, steps):
        if steps < 1:
            raise InvalidArgument("steps must be >= 1")
        pts = [i / steps for i in range(steps + 1)]
        pts[0], pts[-1] = 0.0, 1.0
        return cls(tuple(pts), "uniform-rf")

    @classmethod
    def uniform_ddim(cls, steps, total=1000):
        if steps < 1 or total % steps:
            raise InvalidArgument(f"uniform DDIM grid needs steps dividing {total}, got {steps}")
        stride = total // steps
        return cls(tuple(range(0, total + 1, stride)), "uniform-ddim")

    def __len__(self):
        return len(self.points) - 1


@dataclass
class Inversion:
    """Recovered latent plus convergence diagnostics of the per-step solves."""

    latent: np.ndarray
    converged: bool = True
    max_residual: float = 0.0
    iterations: list = field(default_factory=list)


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericalDivergence(f"non-finite state during {where}")
    return x


def _record(trajectory, x):
    if trajectory is not None:
        trajectory.append(np.array(x, copy=True))


# -- rectified flow -------------------------------------------------------------


def rf_sample(model, x_T, cond, cfg, grid=None, trajectory=None):
    """Explicit Euler from t = 1 down to t = 0 with the guided velocity."""
    grid = grid or TimeGrid.uniform_rf(cfg.steps)
    t = grid.points
    x = np.array(x_T, dtype=np.float64)
    _record(trajectory, x)
    for i in range(len(t) - 1, 0, -1):
        x = x + (t[i - 1] - t[i]) * model.guided_velocity(x, t[i], cond, cfg.guidance_scale)
        _record(trajectory, _check_finite(x, "rf_sample"))
    return x


def rf_invert_naive(model, x_0, cond, cfg, grid=None, trajectory=None):
    """Explicit inversion: each step uses the velocity at the known, less noisy point."""
    grid = grid or TimeGrid.uniform_rf(cfg.steps)
    t = grid.points
    x = np.array(x_0, dtype=np.float64)
    _record(trajectory, x)
    for i in range(1, len(t)):
        x = x + (t[i] - t[i - 1]) * model.guided_velocity(x, t[i - 1], cond, cfg.guidance_scale)
        _record(trajectory, _check_finite(x, "rf_invert_naive"))
    return Inversion(x)


def rf_invert_implicit(model, x_0, cond, cfg, grid=None, trajectory=None):
    """Backward-Euler inversion solving x_i = x_{i-1} + h v(x_i, t_i) per step.

    Each implicit equation is solved by fixed-point iteration started from the
    explicit step.  A step that misses ``fp_tol`` within ``fp_max_iters``
    clears ``converged`` but integration continues.
    """
    grid = grid or TimeGrid.uniform_rf(cfg.steps)
    t = grid.points
    x = np.array(x_0, dtype=np.float64)
    _record(trajectory, x)
    result = Inversion(x)
    for i in range(1, len(t)):
        h = t[i] - t[i - 1]
        y = x + h * model.guided_velocity(x, t[i - 1], cond, cfg.guidance_scale)
        residual = math.inf
        for it in range(1, cfg.fp_max_iters + 1):
            y_next = x + h * model.guided_velocity(y, t[i], cond, cfg.guidance_scale)
            _check_finite(y_next, "rf_invert_implicit")
            residual = float(np.max(np.abs(y_next - y)))
            y = y_next
            if residual <= cfg.fp_tol:
                break
        if residual > cfg.fp_tol:
            result.converged = False
        result.max_residual = max(result.max_residual, residual)
        result.iterations.append(it)
        x = y
        _record(trajectory, x)
    result.latent = x
    return result


# -- DDIM ---------------------------------------------------------------------


def _abar(model, t):
    return model.schedule.alpha_bar(t)


def predicted_x0(model, x_t, t, cond, scale=1.0):
    """x0 estimate (x_t - sqrt(1 - abar) eps) / sqrt(abar) at integer step ``t``."""
    abar = _abar(model, t)
    if abar <= 0:
        raise ZeroDivisionError("alpha_bar is zero")
    eps = model.guided_eps(x_t, abar, cond, scale)
    return (x_t - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar)


def ddim_transfer(x, eps, abar_from, abar_to):
    """Move ``x`` from noise level ``abar_from`` to ``abar_to`` along a fixed eps."""
    x0 = (x - math.sqrt(1.0 - abar_from) * eps) / math.sqrt(abar_from)
    return math.sqrt(abar_to) * x0 + math.sqrt(1.0 - abar_to) * eps


def _ddim_step(model, y, abar_hi, abar_lo, cond, scale):
    """One deterministic DDIM sampling step from the noisier level ``abar_hi``."""
    eps = model.guided_eps(y, abar_hi, cond, scale)
    return ddim_transfer(y, eps, abar_hi, abar_lo)


def ddim_sample(model, x_T, cond, cfg, grid=None, trajectory=None):
    grid = grid or TimeGrid.uniform_ddim(cfg.steps, model.schedule.steps)
    ab = [_abar(model, t) for t in grid.points]
    x = np.array(x_T, dtype=np.float64)
    _record(trajectory, x)
    for i in range(len(ab) - 1, 0, -1):
        x = _ddim_step(model, x, ab[i], ab[i - 1], cond, cfg.guidance_scale)
        _record(trajectory, _check_finite(x, "ddim_sample"))
    return x


def ddim_invert_naive(model, x_0, cond, cfg, grid=None, trajectory=None):
    """Forward-Euler DDIM inversion with eps evaluated at the known point.

    From the clean endpoint (abar = 1) the noise is evaluated at the next
    grid level, since the predictor is undefined at abar = 1.
    """
    grid = grid or TimeGrid.uniform_ddim(cfg.steps, model.schedule.steps)
    ab = [_abar(model, t) for t in grid.points]
    x = np.array(x_0, dtype=np.float64)
    _record(trajectory, x)
    for i in range(1, len(ab)):
        level = ab[i - 1] if ab[i - 1] < 1.0 else ab[i]
        eps = model.guided_eps(x, level, cond, cfg.guidance_scale)
        x = ddim_transfer(x, eps, ab[i - 1], ab[i])
        _record(trajectory, _check_finite(x, "ddim_invert_naive"))
    return Inversion(x)


def _step_jvp(model, y, abar_hi, abar_lo, cond, cfg, v):
    """Directional derivative of the DDIM sampling step at ``y`` along ``v``."""
    if cfg.gradient == "analytic":
        de = model.guided_eps_jvp(y, abar_hi, cond, cfg.guidance_scale, v)
        a_hi, s_hi = math.sqrt(abar_hi), math.sqrt(1.0 - abar_hi)
        a_lo, s_lo = math.sqrt(abar_lo), math.sqrt(1.0 - abar_lo)
        return (a_lo / a_hi) * v + (s_lo - a_lo * s_hi / a_hi) * de
    norm = float(np.sqrt(np.sum(v * v)))
    if norm == 0.0:
        return np.zeros_like(v)
    d = v * (cfg.fd_eps / norm)
    plus = _ddim_step(model, y + d, abar_hi, abar_lo, cond, cfg.guidance_scale)
    minus = _ddim_step(model, y - d, abar_hi, abar_lo, cond, cfg.guidance_scale)
    return (plus - minus) * (norm / (2.0 * cfg.fd_eps))


def solve_ddim_step(model, x_lo, abar_lo, abar_hi, cond, cfg, y0):
    """Find y with step(y; abar_hi -> abar_lo) = x_lo by gradient descent on the residual.

    The descent direction is the gradient J^T r of 0.5*||r||^2 (the step
    Jacobian is symmetric for posterior-mean predictors, so J^T r = J r).
    With ``line_search`` the step length minimizes the linearized residual
    along that direction; otherwise a fixed ``gd_step`` on ||r||^2 is used.
    Returns (y, initial_residual, final_residual, iterations).
    """
    y = y0
    r = _ddim_step(model, y, abar_hi, abar_lo, cond, cfg.guidance_scale) - x_lo
    res0 = res = float(np.sum(r * r))
    it = 0
    for it in range(1, cfg.gd_max_iters + 1):
        if math.sqrt(res) <= cfg.fp_tol:
            it -= 1
            break
        g = _step_jvp(model, y, abar_hi, abar_lo, cond, cfg, r)
        if cfg.line_search:
            jg = _step_jvp(model, y, abar_hi, abar_lo, cond, cfg, g)
            denom = float(np.sum(jg * jg))
            lr = float(np.sum(r * jg)) / denom if denom > 0 else 0.0
        else:
            lr = 2.0 * cfg.gd_step
        accepted = False
        for _ in range(30):
            y_try = y - lr * g
            r_try = _ddim_step(model, y_try, abar_hi, abar_lo, cond, cfg.guidance_scale) - x_lo
            res_try = float(np.sum(r_try * r_try))
            if res_try < res:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break
        y, r, res = y_try, r_try, res_try
    return y, math.sqrt(res0), math.sqrt(res), it


def ddim_invert_exact(model, x_0, cond, cfg, grid=None, trajectory=None):
    """DDIM inversion where every step is refined until it re-generates its input.

    Each step starts from the naive inversion step and descends the residual
    ||step(y) - x||^2 of the forward (sampling) step.  ``converged`` is
    cleared when some step fails to reduce its residual below the naive one.
    """
    grid = grid or TimeGrid.uniform_ddim(cfg.steps, model.schedule.steps)
    ab = [_abar(model, t) for t in grid.points]
    x = np.array(x_0, dtype=np.float64)
    _record(trajectory, x)
    result = Inversion(x)
    for i in range(1, len(ab)):
        level = ab[i - 1] if ab[i - 1] < 1.0 else ab[i]
        y0 = ddim_transfer(x, model.guided_eps(x, level, cond, cfg.guidance_scale), ab[i - 1], ab[i])
        y, res0, res, it = solve_ddim_step(model, x, ab[i - 1], ab[i], cond, cfg, y0)
        if res > cfg.fp_tol and not res < res0:
            result.converged = False
        result.max_residual = max(result.max_residual, res)
        result.iterations.append(it)
        x = _check_finite(y, "ddim_invert_exact")
        _record(trajectory, x)
    result.latent = x
    return result


# -- DPM-Solver++ ---------------------------------------------------------------


@dataclass
class MultistepContext:
    """Per-trajectory state for multistep DPM-Solver++.

    ``alpha_bars`` lists the trajectory's noise levels in integration order.
    """

    alpha_bars: list
    prev_x0: np.ndarray = None
    prev_h: float = None


def _log_snr(abar):
    return 0.5 * (math.log(abar) - math.log1p(-abar))


def dpmpp_step(model, x, i, order, cond, ctx, scale=1.0):
    """Exponential-integrator step from ``ctx.alpha_bars[i]`` to ``ctx.alpha_bars[i+1]``.

    Order 1 is x_t = (s_t/s_s) x_s + a_t (1 - e^{-h}) x0_s.  Order 2 adds
    a_t (h - 1 + e^{-h}) D1 with D1 = (x0_s - x0_prev) / h_prev, the backward
    difference of the x0-prediction in log-SNR.  Landing exactly on the clean
    level (abar = 1) always uses order 1.
    """
    if order not in (1, 2):
        raise InvalidArgument(f"order must be 1 or 2, got {order}")
    if order == 2 and ctx.prev_x0 is None:
        raise InvalidState("order-2 step needs a previous x0-prediction")
    abar_s, abar_t = ctx.alpha_bars[i], ctx.alpha_bars[i + 1]
    a_s, s_s = math.sqrt(abar_s), math.sqrt(1.0 - abar_s)
    a_t, s_t = math.sqrt(abar_t), math.sqrt(1.0 - abar_t)
    eps = model.guided_eps(x, abar_s, cond, scale)
    x0 = (x - s_s * eps) / a_s
    exp_neg_h = (s_t / a_t) / (s_s / a_s)  # e^{-h}, h = lambda_t - lambda_s
    out = (s_t / s_s) * x + a_t * (1.0 - exp_neg_h) * x0
    h = None
    if abar_t < 1.0:
        h = _log_snr(abar_t) - _log_snr(abar_s)
        if order == 2:
            d1 = (x0 - ctx.prev_x0) / ctx.prev_h
            out = out + a_t * (h - 1.0 + exp_neg_h) * d1
    ctx.prev_x0, ctx.prev_h = x0, h
    return out


def dpmpp_solve(model, x, alpha_bars, cond, order=2, scale=1.0, trajectory=None):
    """Integrate through ``alpha_bars`` (increasing); the first step is always order 1."""
    ctx = MultistepContext(list(alpha_bars))
    x = np.array(x, dtype=np.float64)
    _record(trajectory, x)
    for i in range(len(ctx.alpha_bars) - 1):
        step_order = 1 if ctx.prev_x0 is None else order
        x = _check_finite(dpmpp_step(model, x, i, step_order, cond, ctx, scale), "dpmpp")
        _record(trajectory, x)
    return x


def dpmpp_sample(model, x_T, cond, cfg, order=2, grid=None, trajectory=None):
    grid = grid or TimeGrid.uniform_ddim(cfg.steps, model.schedule.steps)
    ab = [_abar(model, t) for t in reversed(grid.points)]
    return dpmpp_solve(model, x_T, ab, cond, order, cfg.guidance_scale, trajectory)


def dpmpp_invert(model, x_0, cond, cfg, order=2, grid=None, trajectory=None):
    """Explicit multistep inversion: a naive DDIM step off the clean endpoint, then
    DPM-Solver++ steps run toward increasing noise."""
    grid = grid or TimeGrid.uniform_ddim(cfg.steps, model.schedule.steps)
    ab = [_abar(model, t) for t in grid.points]
    first = ddim_invert_naive(model, x_0, cond, replace(cfg, steps=1),
                              grid=TimeGrid(grid.points[:2], grid.kind))
    x = first.latent
    if trajectory is not None:
        trajectory.append(np.array(x_0, dtype=np.float64))
    x = dpmpp_solve(model, x, ab[1:], cond, order, cfg.guidance_scale, trajectory)
    return Inversion(x)
