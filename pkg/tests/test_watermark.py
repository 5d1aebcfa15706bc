import numpy as np
import pytest

from ringlab import watermark as wmk
from ringlab.errors import InvalidArgument
from ringlab.grid import RngStream, fft2, fftshift


def brute_mask(h, w, r, cy, cx):
    return {(i, j) for i in range(h) for j in range(w) if ((i - cy) ** 2 + (j - cx) ** 2) ** 0.5 <= r}


@pytest.fixture(scope="module")
def mask64():
    return wmk.make_ring_mask(64, 64, 10)


@pytest.fixture(scope="module")
def key64(mask64):
    return wmk.make_ring_key(mask64, RngStream(99, 1))


def test_geometric_half_pixel_radius_rejected():
    with pytest.raises(InvalidArgument):
        wmk.make_ring_mask(8, 8, 0.5, center="geometric")


def test_geometric_unit_radius_is_four_center_pixels():
    m = wmk.make_ring_mask(8, 8, 1, center="geometric")
    assert set(zip(*np.nonzero(m.member))) == {(3, 3), (3, 4), (4, 3), (4, 4)}


@pytest.mark.parametrize("center,cy", [("geometric", 31.5), ("dc", 32)])
def test_mask_count_matches_enumeration(center, cy):
    m = wmk.make_ring_mask(64, 64, 10, center=center)
    ref = brute_mask(64, 64, 10, cy, cy)
    assert set(zip(*np.nonzero(m.member))) == ref


def test_dc_mask_small_radius_and_symmetry():
    m = wmk.make_ring_mask(8, 8, 0.5)
    assert m.size == 1 and m.member[4, 4]
    assert wmk.make_ring_mask(64, 64, 10).is_symmetric
    assert not wmk.make_ring_mask(64, 64, 10, center="geometric").is_symmetric


@pytest.mark.parametrize("radius", [-1, 32, 40])
def test_radius_out_of_range(radius):
    with pytest.raises(InvalidArgument):
        wmk.make_ring_mask(64, 64, radius)


def test_channel_checked():
    with pytest.raises(InvalidArgument):
        wmk.make_ring_mask(64, 64, 10, channel=4, channels=4)


def test_ring_constant_key_one_value_per_ring():
    m = wmk.make_ring_mask(64, 64, 9.5, center="geometric")
    key = wmk.make_ring_key(m, RngStream(3), wmk.RING_CONSTANT)
    rings = m.ring_index[m.member]
    assert sorted(set(rings)) == list(range(10))
    vals = key.values[m.member]
    for r in range(10):
        assert len(set(vals[rings == r])) == 1
    assert len(set(vals)) == 10


def test_key_determinism(mask64):
    a = wmk.make_ring_key(mask64, RngStream(5, 0))
    b = wmk.make_ring_key(mask64, RngStream(5, 0))
    np.testing.assert_array_equal(a.values, b.values)


def test_key_second_moment():
    # 32+ rings per key; pooled over seeds the mean |w|^2 estimates H*W = 4096
    m = wmk.make_ring_mask(64, 64, 31.9, center="geometric")
    assert m.n_rings >= 32
    mods = [np.abs(wmk.make_ring_key(m, RngStream(s), wmk.RING_CONSTANT).ring_values) ** 2 for s in range(20)]
    assert np.mean(mods) == pytest.approx(4096, rel=0.10)


def test_hermitian_key_is_conjugate_symmetric_and_ring_constant_in_modulus(mask64, key64):
    v = key64.values
    np.testing.assert_array_equal(v, np.conj(mask64.mirror(v)))
    rings = mask64.ring_index[mask64.member]
    mods = np.abs(v[mask64.member])
    # inside radius 10 the only self-conjugate bin is DC, which keeps just the real part
    np.testing.assert_allclose(mods[rings > 0], np.abs(key64.ring_values[rings[rings > 0]]), rtol=1e-15)
    assert v[32, 32] == key64.ring_values[0].real
    assert rings.max() == 10


def test_hermitian_requires_symmetric_mask():
    m = wmk.make_ring_mask(64, 64, 10, center="geometric")
    with pytest.raises(InvalidArgument):
        wmk.make_ring_key(m, RngStream(1), wmk.HERMITIAN)


def test_embed_recover_is_lossless(mask64, key64, rng):
    x = rng.standard_normal((4, 64, 64))
    xw = wmk.embed(x, key64, mask64)
    assert np.max(np.abs(wmk.recover_key(xw, mask64) - key64.masked(mask64))) < 1e-8
    before = fftshift(fft2(x[0]))[~mask64.member]
    after = fftshift(fft2(xw[0]))[~mask64.member]
    assert np.max(np.abs(after - before)) < 1e-8
    np.testing.assert_array_equal(xw[1:], x[1:])
    np.testing.assert_allclose(wmk.embed(xw, key64, mask64), xw, atol=1e-8)


def test_ring_constant_residual_depends_only_on_key(rng):
    m = wmk.make_ring_mask(64, 64, 10)
    key = wmk.make_ring_key(m, RngStream(8), wmk.RING_CONSTANT)
    res = [wmk.recover_key(wmk.embed(rng.standard_normal((1, 64, 64)), key, m), m) - key.masked(m)
           for _ in range(2)]
    assert np.abs(res[0]).max() > 1.0
    np.testing.assert_allclose(res[0], res[1], atol=1e-8)


def test_recover_zero_latent(mask64):
    assert not np.any(wmk.recover_key(np.zeros((1, 64, 64)), mask64))


def test_dimension_mismatch(mask64, key64):
    with pytest.raises(InvalidArgument):
        wmk.embed(np.zeros((1, 32, 32)), key64, mask64)
    with pytest.raises(InvalidArgument):
        wmk.recover_key(np.zeros((1, 64, 32)), mask64)


def test_gaussian_latents_sit_at_the_clean_baseline(mask64, key64):
    # distance of unwatermarked noise to the key: mean |z - w| over the mask
    d = [wmk.mean_l1_distance(wmk.recover_key(RngStream(s).normal((1, 64, 64)), mask64), key64.masked(mask64))
         for s in range(100)]
    d_w = [wmk.mean_l1_distance(wmk.recover_key(wmk.embed(RngStream(s).normal((1, 64, 64)), key64, mask64),
                                                mask64), key64.masked(mask64)) for s in range(5)]
    assert np.std(d) / np.mean(d) < 0.1
    assert max(d_w) < 1e-6 * np.abs(key64.masked(mask64)).mean()
    assert min(d) > 50


def test_metric_examples():
    w = np.array([1.0 + 0j])
    assert tuple(wmk.extraction_metrics(w, w)) == (0.0, 0.0, 0.0)
    assert tuple(wmk.extraction_metrics(np.zeros(1), w)) == (1.0, 1.0, 1.0)
    w3 = np.array([1.0, 2.0, 3.0])
    assert wmk.extraction_metrics(w3 + np.array([3 + 4j, 0, 1]), w3).mean_l1 == 2.0
    with pytest.raises(ZeroDivisionError):
        wmk.extraction_metrics(w3, np.zeros(3))
    assert wmk.mean_l1_distance(w3, np.zeros(3)) == 2.0


def test_metrics_match_scalar_loop(rng):
    n = 57
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    wh = w + 0.3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    l1 = l1w = l2 = l2w = 0.0
    for a, b in zip(wh, w):
        d = abs(a - b)
        l1 += d
        l2 += d * d
        l1w += abs(b)
        l2w += abs(b) ** 2
    m = wmk.extraction_metrics(wh, w)
    assert m.mean_l1 == pytest.approx(l1 / n, rel=1e-13)
    assert m.nmae == pytest.approx(l1 / l1w, rel=1e-13)
    assert m.nmse == pytest.approx(l2 / l2w, rel=1e-13)


def test_watermark_files_roundtrip(tmp_path, mask64, key64):
    prefix = str(tmp_path / "wm")
    wmk.save_watermark(prefix, key64, mask64)
    key, mask = wmk.load_watermark(prefix)
    np.testing.assert_array_equal(mask.member, mask64.member)
    np.testing.assert_array_equal(key.values, key64.values)
    np.testing.assert_array_equal(key.ring_values, key64.ring_values)
    assert (key.seed, key.pattern) == (99, wmk.HERMITIAN)
