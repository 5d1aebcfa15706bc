import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mann_whitney, sweep_threshold
from ringlab import stats
from ringlab.errors import InvalidArgument

samples = st.lists(st.integers(0, 20).map(float), min_size=1, max_size=40)


def test_auc_examples():
    assert stats.roc_auc([1, 2], [3, 4]) == 1.0
    assert stats.roc_auc([1, 2, 3], [1, 2, 3]) == 0.5
    assert stats.roc_auc([1, 2, 3], [2.5, 4, 5]) == mann_whitney([1, 2, 3], [2.5, 4, 5]) == 8 / 9
    with pytest.raises(InvalidArgument):
        stats.roc_auc([], [1.0])


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_auc_is_exact_mann_whitney(wm, cl):
    assert stats.roc_auc(wm, cl) == mann_whitney(wm, cl)
    assert stats.roc_auc(wm, cl) + stats.roc_auc(cl, wm) == 1.0


def test_auc_exact_at_1000_points():
    gen = np.random.default_rng(2)
    wm = np.round(gen.normal(0, 1, 1000), 1)
    cl = np.round(gen.normal(0.5, 1, 1000), 1)
    # vectorized enumeration of all 10^6 pairs
    diff = cl[None, :] - wm[:, None]
    ref = (np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)) / diff.size
    assert stats.roc_auc(wm, cl) == ref


def test_tpr_separated_and_sweep():
    pts = stats.tpr_at_fpr([0.1, 0.2], np.arange(1, 101))
    assert [p.tpr for p in pts] == [1.0, 1.0, 1.0]
    clean = list(range(1, 101))
    wm = [0.5, 3.5, 6.5, 50.0]
    for p in stats.tpr_at_fpr(wm, clean):
        tpr, thr = sweep_threshold(wm, clean, p.fpr)
        assert (p.tpr, p.threshold) == (tpr, thr)
        assert sum(c < p.threshold for c in clean) <= p.fpr * 100
    five = stats.tpr_at_fpr(wm, clean, (0.05,))[0]
    assert five.threshold == 6.0 and five.realized_fpr == 0.05


@settings(max_examples=150, deadline=None)
@given(samples, st.lists(st.integers(0, 20).map(float), min_size=100, max_size=150))
def test_tpr_matches_sweep_and_is_monotone(wm, cl):
    pts = stats.tpr_at_fpr(wm, cl)
    for p in pts:
        assert (p.tpr, p.threshold) == sweep_threshold(wm, cl, p.fpr)
        assert p.realized_fpr <= p.fpr
    assert pts[0].tpr <= pts[1].tpr <= pts[2].tpr
    assert pts[0].threshold <= pts[1].threshold <= pts[2].threshold


def test_tpr_identical_distributions_tracks_fpr():
    gen = np.random.default_rng(0)
    tprs = [stats.tpr_at_fpr(gen.random(2000), gen.random(2000), (0.10,))[0].tpr for _ in range(20)]
    assert np.mean(tprs) == pytest.approx(0.10, abs=0.01)


def test_small_clean_sample_warns():
    with pytest.warns(UserWarning):
        stats.tpr_at_fpr([1.0], [2.0, 3.0], (0.01,))


def test_two_bin_skld():
    p = [0.0] * 8 + [1.0] * 2
    q = [0.0] * 2 + [1.0] * 8
    ref = 0.5 * 2 * (0.8 * math.log(4) + 0.2 * math.log(0.25))
    assert ref == pytest.approx(0.8318, abs=1e-4)
    assert stats.symmetric_kld(p, q, bins=2) == pytest.approx(ref, abs=1e-8)
    # direct summation over the smoothed histograms
    P = np.array([0.8, 0.2]) + 1e-10
    Q = np.array([0.2, 0.8]) + 1e-10
    P, Q = P / P.sum(), Q / Q.sum()
    direct = 0.5 * sum(a * math.log(a / b) + b * math.log(b / a) for a, b in zip(P, Q))
    assert stats.symmetric_kld(p, q, bins=2) == pytest.approx(direct, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(samples, samples, st.integers(2, 40))
def test_skld_properties(p, q, bins):
    d = stats.symmetric_kld(p, q, bins)
    assert d >= 0
    assert d == stats.symmetric_kld(q, p, bins)
    assert stats.symmetric_kld(p, p, bins) == 0.0


def test_skld_degenerate_and_bins():
    assert stats.symmetric_kld([3.0, 3.0], [3.0], 8) == 0.0
    with pytest.raises(InvalidArgument):
        stats.symmetric_kld([1.0], [2.0], bins=1)


def test_summarize():
    s = stats.summarize([5.0])
    assert (s.mean, s.std, s.std_defined) == (5.0, 0.0, False)
    s = stats.summarize([1.0, 2.0, 3.0])
    assert (s.mean, s.std, s.n) == (2.0, 1.0, 3)
    v = np.random.default_rng(1).standard_normal(1001)
    m = sum(v) / len(v)
    sd = math.sqrt(sum((x - m) ** 2 for x in v) / (len(v) - 1))
    s = stats.summarize(v)
    assert s.mean == pytest.approx(m, rel=1e-14) and s.std == pytest.approx(sd, rel=1e-13)
    with pytest.raises(InvalidArgument):
        stats.summarize([])


def test_detection_report_fixtures():
    from importlib.resources import files

    from ringlab.report import read_distance_csv

    base = files("ringlab").joinpath("data/fixtures")
    wm = read_distance_csv(str(base / "wm_distances.csv"))
    cl = read_distance_csv(str(base / "clean_distances.csv"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = stats.detection_report(wm, cl)
    assert rep.auc == mann_whitney(wm, cl)
    assert rep.to_dict()["auc"] == rep.auc
    assert len(rep.to_dict()["tpr_at_fpr"]) == 3


def test_perfect_separation_report():
    rep = stats.detection_report(np.linspace(0, 1, 100), np.linspace(2, 3, 100))
    assert rep.auc == 1.0 and all(p.tpr == 1.0 for p in rep.operating_points)
