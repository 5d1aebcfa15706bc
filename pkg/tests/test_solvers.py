import math

import numpy as np
import pytest

from conftest import ConstantField, ZeroEps
from oracles import single_gaussian_flow
from ringlab import solvers as S
from ringlab.errors import InvalidArgument, InvalidState, NumericalDivergence
from ringlab.models import Condition, MixtureModel, NoiseSchedule

C0 = Condition.exact(0)


def nmse(a, b):
    return float(np.sum((a - b) ** 2) / np.sum(b**2))


def gaussian(mu, sigma, shape=(1, 4, 4)):
    return MixtureModel(np.full((1,) + shape, mu), [sigma], [1.0], allow_deterministic=sigma == 0)


def test_time_grids():
    g = S.TimeGrid.uniform_rf(28)
    assert g.points[0] == 0.0 and g.points[-1] == 1.0 and len(g) == 28
    assert np.ptp(np.diff(g.points)) < 1e-12
    d = S.TimeGrid.uniform_ddim(50)
    assert d.points[:3] == (0, 20, 40) and d.points[-1] == 1000
    with pytest.raises(InvalidArgument):
        S.TimeGrid.uniform_ddim(30)
    with pytest.raises(InvalidArgument):
        S.TimeGrid.uniform_rf(0)


def test_solver_config_defaults_and_validation():
    assert S.SolverConfig.rf().steps == 28 and S.SolverConfig.ddim().steps == 50
    cfg = S.SolverConfig()
    assert (cfg.fp_max_iters, cfg.fp_tol, cfg.gd_max_iters, cfg.gd_step, cfg.guidance_scale) == (50, 1e-10, 20, 0.1,
                                                                                                 3.5)
    for bad in ({"steps": 0}, {"fp_tol": 0.0}, {"gradient": "newton"}):
        with pytest.raises(InvalidArgument):
            S.SolverConfig(**bad)


def test_constant_field_rf(rng):
    m = ConstantField(0.25)
    x = rng.standard_normal((1, 4, 4))
    cfg = S.SolverConfig(steps=7)
    np.testing.assert_allclose(S.rf_sample(m, x, C0, cfg), x - 0.25, atol=1e-14)
    naive = S.rf_invert_naive(m, x, C0, cfg)
    np.testing.assert_allclose(naive.latent, x + 0.25, atol=1e-14)
    imp = S.rf_invert_implicit(m, x, C0, cfg)
    np.testing.assert_array_equal(imp.latent, naive.latent)
    assert imp.iterations == [1] * 7 and imp.converged
    np.testing.assert_array_equal(S.rf_invert_naive(ConstantField(0.0), x, C0, cfg).latent, x)


def test_trajectory_is_recorded(rng):
    traj = []
    S.rf_sample(ConstantField(1.0), rng.standard_normal((1, 2, 2)), C0, S.SolverConfig(steps=5), trajectory=traj)
    assert len(traj) == 6
    np.testing.assert_allclose(traj[-1] - traj[0], -1.0)


def test_divergence_is_reported():
    with pytest.raises(NumericalDivergence):
        S.rf_sample(ConstantField(np.nan), np.zeros((1, 2, 2)), C0, S.SolverConfig(steps=2))


def test_single_gaussian_population():
    m = gaussian(0.6, 0.4, shape=(1, 1, 1))
    cfg = S.SolverConfig(steps=200, guidance_scale=1.0)
    gen = np.random.default_rng(0)
    out = np.array([S.rf_sample(m, gen.standard_normal((1, 1, 1)), C0, cfg)[0, 0, 0] for _ in range(500)])
    assert abs(out.mean() - 0.6) < 3 * 0.4 / math.sqrt(500)
    assert out.std(ddof=1) == pytest.approx(0.4, rel=0.15)


def test_euler_is_first_order(rng):
    m = gaussian(0.7, 0.5)
    x1 = rng.standard_normal((1, 4, 4))
    ref = single_gaussian_flow(x1, 0.0, 1.0, 1.0, 0.0, 0.7, 0.5)
    errs = [np.abs(S.rf_sample(m, x1, C0, S.SolverConfig(steps=n, guidance_scale=1.0)) - ref).max() for n in (20, 40)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_rf_implicit_roundtrip_beats_naive(small_model):
    cfg = S.SolverConfig.rf()
    cond = Condition.exact(1)
    x_T = np.random.default_rng(3).standard_normal(small_model.shape)
    x_0 = S.rf_sample(small_model, x_T, cond, cfg)
    imp = S.rf_invert_implicit(small_model, x_0, cond, cfg)
    naive = S.rf_invert_naive(small_model, x_0, cond, cfg)
    assert imp.converged and imp.max_residual <= 1e-10
    assert nmse(imp.latent, x_T) < 1e-6 < nmse(naive.latent, x_T)


def test_fixed_point_non_convergence_is_flagged_not_fatal(small_model):
    cfg = S.SolverConfig(steps=28, fp_max_iters=1)
    x_0 = np.random.default_rng(3).standard_normal(small_model.shape)
    inv = S.rf_invert_implicit(small_model, x_0, Condition.exact(0), cfg)
    assert not inv.converged and np.all(np.isfinite(inv.latent))


def test_point_mass_ddim_sampling_lands_on_mean(rng):
    m = gaussian(0.3, 0.0)
    x_T = rng.standard_normal((1, 4, 4))
    for steps in (1, 10, 50):
        np.testing.assert_allclose(S.ddim_sample(m, x_T, C0, S.SolverConfig(steps=steps)), 0.3, atol=1e-12)
    np.testing.assert_allclose(S.predicted_x0(m, x_T, 1000, C0), 0.3, atol=1e-9)


def test_predicted_x0_identity(small_model, rng):
    x = rng.standard_normal(small_model.shape)
    ab = small_model.schedule.alpha_bar(250)
    x0 = S.predicted_x0(small_model, x, 250, Condition.null())
    eps = small_model.guided_eps(x, ab, Condition.null(), 1.0)
    np.testing.assert_allclose(math.sqrt(ab) * x0 + math.sqrt(1 - ab) * eps, x, atol=1e-12)


def test_naive_ddim_point_mass_matches_scalar_recursion():
    mu = 0.8
    m = gaussian(mu, 0.0)
    cfg = S.SolverConfig(steps=10)
    ab = [m.schedule.alpha_bar(t) for t in S.TimeGrid.uniform_ddim(10).points]
    x = mu
    for i in range(1, len(ab)):
        lvl = ab[i - 1] if i > 1 else ab[1]
        e = (x - math.sqrt(lvl) * mu) / math.sqrt(1 - lvl)
        x0 = (x - math.sqrt(1 - ab[i - 1]) * e) / math.sqrt(ab[i - 1])
        x = math.sqrt(ab[i]) * x0 + math.sqrt(1 - ab[i]) * e
    out = S.ddim_invert_naive(m, np.full((1, 4, 4), mu), C0, cfg).latent
    np.testing.assert_allclose(out, x, rtol=1e-12)


def test_zero_eps_naive_inversion_scales_by_sqrt_alpha_bar(rng):
    sched = NoiseSchedule()
    x = rng.standard_normal((1, 4, 4))
    out = S.ddim_invert_naive(ZeroEps(sched), x, C0, S.SolverConfig(steps=50)).latent
    np.testing.assert_allclose(out, math.sqrt(sched.alpha_bar(1000)) * x, rtol=1e-12)


def test_naive_ddim_roundtrip_improves_with_steps(small_model):
    cond = Condition.exact(0)
    x_T = np.random.default_rng(4).standard_normal(small_model.shape)
    errs = []
    for steps in (10, 50):
        cfg = S.SolverConfig(steps=steps)
        x_0 = S.ddim_sample(small_model, x_T, cond, cfg)
        errs.append(nmse(S.ddim_invert_naive(small_model, x_0, cond, cfg).latent, x_T))
    assert errs[1] < errs[0]


@pytest.mark.parametrize("gradient", ["fd", "analytic"])
def test_exact_ddim_inversion_affine(rng, gradient):
    m = gaussian(0.5, 0.3)
    cfg = S.SolverConfig.ddim(gradient=gradient, guidance_scale=1.0)
    x_T = rng.standard_normal((1, 4, 4))
    x_0 = S.ddim_sample(m, x_T, C0, cfg)
    exact = S.ddim_invert_exact(m, x_0, C0, cfg)
    naive = S.ddim_invert_naive(m, x_0, C0, cfg)
    assert nmse(exact.latent, x_T) < 1e-8 < nmse(naive.latent, x_T)


def test_gradient_paths_agree(small_model):
    cond = Condition.exact(2)
    cfg = S.SolverConfig.ddim(steps=20)
    x_0 = S.ddim_sample(small_model, np.random.default_rng(6).standard_normal(small_model.shape), cond, cfg)
    fd = S.ddim_invert_exact(small_model, x_0, cond, cfg).latent
    an = S.ddim_invert_exact(small_model, x_0, cond, S.SolverConfig.ddim(steps=20, gradient="analytic")).latent
    assert np.abs(fd - an).max() < 1e-6


def test_descent_never_increases_residual(small_model):
    cfg = S.SolverConfig.ddim()
    cond = Condition.exact(0)
    x_lo = np.random.default_rng(8).standard_normal(small_model.shape) * 0.5
    ab = small_model.schedule.alpha_bars
    y0 = x_lo * 1.01
    for line_search in (True, False):
        c = S.SolverConfig.ddim(line_search=line_search)
        _, res0, res, _ = S.solve_ddim_step(small_model, x_lo, ab[400], ab[420], cond, c, y0)
        assert res <= res0
    assert cfg.gd_max_iters == 20


def test_dpmpp_order1_is_exact_for_point_mass(rng):
    m = gaussian(-0.4, 0.0)
    x = rng.standard_normal((1, 4, 4))
    ab = [0.2, 0.5]
    ctx = S.MultistepContext(ab)
    out = S.dpmpp_step(m, x, 0, 1, C0, ctx)
    ref = single_gaussian_flow(x, math.sqrt(0.2), math.sqrt(0.8), math.sqrt(0.5), math.sqrt(0.5), -0.4, 0.0)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_dpmpp_order2_equals_order1_for_constant_x0(rng):
    m = gaussian(-0.4, 0.0)
    x = rng.standard_normal((1, 4, 4))
    ab = [0.1, 0.3, 0.6]
    ctx1, ctx2 = S.MultistepContext(ab), S.MultistepContext(ab)
    y1 = S.dpmpp_step(m, x, 0, 1, C0, ctx1)
    y2 = S.dpmpp_step(m, x, 0, 1, C0, ctx2)
    np.testing.assert_allclose(S.dpmpp_step(m, y1, 1, 1, C0, ctx1), S.dpmpp_step(m, y2, 1, 2, C0, ctx2), atol=1e-12)


def test_dpmpp_order2_needs_history(rng):
    with pytest.raises(InvalidState):
        S.dpmpp_step(gaussian(0.0, 0.5), np.zeros((1, 4, 4)), 0, 2, C0, S.MultistepContext([0.1, 0.2]))
    with pytest.raises(InvalidArgument):
        S.dpmpp_step(gaussian(0.0, 0.5), np.zeros((1, 4, 4)), 0, 3, C0, S.MultistepContext([0.1, 0.2]))


def test_dpmpp_roundtrip_is_close(small_model):
    cond = Condition.exact(3)
    cfg = S.SolverConfig.ddim()
    x_T = np.random.default_rng(9).standard_normal(small_model.shape)
    x_0 = S.dpmpp_sample(small_model, x_T, cond, cfg)
    inv = S.dpmpp_invert(small_model, x_0, cond, cfg)
    assert np.all(np.isfinite(inv.latent))
    assert nmse(inv.latent, x_T) < 1.0


def test_bit_identical_reruns(small_model):
    cfg = S.SolverConfig.rf()
    x = np.random.default_rng(1).standard_normal(small_model.shape)
    a = S.rf_invert_implicit(small_model, x, Condition.null(), cfg).latent
    b = S.rf_invert_implicit(small_model, x, Condition.null(), cfg).latent
    assert a.tobytes() == b.tobytes()
