"""Detection statistics over populations of Fourier distances.

Scores are ``-distance``: a higher score means "more likely watermarked".
"""
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ringlab.errors import InvalidArgument

FPR_LEVELS = (0.01, 0.05, 0.10)
KLD_BINS = 32
KLD_EPS = 1e-10


def _values(sample, name):
    v = np.asarray(sample, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidArgument(f"{name} sample is empty")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument(f"{name} sample has non-finite values")
    return v


def roc_auc(watermarked, clean):
    """Exact Mann-Whitney AUC: P(d_wm < d_clean) + P(d_wm == d_clean) / 2."""
    wm = _values(watermarked, "watermarked")
    cl = np.sort(_values(clean, "clean"))
    below = np.searchsorted(cl, wm, side="left")  # clean distances < wm distance
    at_or_below = np.searchsorted(cl, wm, side="right")
    greater = cl.size - at_or_below
    ties = at_or_below - below
    # integer counts, so the result is exact up to the final division
    u2 = 2 * int(greater.sum()) + int(ties.sum())
    return u2 / (2.0 * wm.size * cl.size)


class OperatingPoint(NamedTuple):
    fpr: float
    tpr: float
    threshold: float  # in distance units: flag as watermarked when distance < threshold
    realized_fpr: float


def tpr_at_fpr(watermarked, clean, fpr_levels=FPR_LEVELS):
    """TPR at thresholds calibrated on the clean sample.

    For each level the score threshold is the (floor(fpr*n)+1)-th largest clean
    score, so at most floor(fpr*n) clean scores lie strictly above it.
    """
    wm_scores = -_values(watermarked, "watermarked")
    cl_scores = np.sort(-_values(clean, "clean"))[::-1]
    n = cl_scores.size
    out = []
    for fpr in fpr_levels:
        if not 0 < fpr < 1:
            raise InvalidArgument(f"fpr level must lie in (0, 1), got {fpr}")
        if n < 1.0 / fpr:
            warnings.warn(f"{n} clean samples cannot resolve FPR {fpr}; threshold is the maximum clean score",
                          stacklevel=2)
        allowed = int(np.floor(fpr * n + 1e-9))
        thr = cl_scores[min(allowed, n - 1)]
        out.append(OperatingPoint(
            fpr=float(fpr),
            tpr=float(np.mean(wm_scores > thr)),
            threshold=float(-thr),
            realized_fpr=float(np.mean(cl_scores > thr)),
        ))
    return out


def _smoothed_hist(values, edges):
    counts, _ = np.histogram(values, bins=edges)
    p = counts / values.size + KLD_EPS
    return p / p.sum()


def kl_divergence(p, q):
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    return float(np.sum(p * np.log(p / q)))


def symmetric_kld(p_values, q_values, bins=KLD_BINS):
    """0.5*(KL(P||Q) + KL(Q||P)) of eps-smoothed histograms on a shared equal-width range."""
    p_values = _values(p_values, "P")
    q_values = _values(q_values, "Q")
    if bins < 2:
        raise InvalidArgument("need at least 2 bins")
    lo = min(p_values.min(), q_values.min())
    hi = max(p_values.max(), q_values.max())
    if lo == hi:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    p = _smoothed_hist(p_values, edges)
    q = _smoothed_hist(q_values, edges)
    return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p))


class Summary(NamedTuple):
    mean: float
    std: float
    n: int
    std_defined: bool


def summarize(values):
    """Mean and sample standard deviation (n - 1); std is reported 0 and flagged for n = 1."""
    v = _values(values, "summary")
    mean = float(np.mean(v))
    if v.size < 2:
        return Summary(mean, 0.0, 1, False)
    return Summary(mean, float(np.std(v, ddof=1)), int(v.size), True)


@dataclass
class DetectionReport:
    auc: float
    operating_points: list
    watermarked: Summary
    clean: Summary
    skld: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "auc": self.auc,
            "tpr_at_fpr": [p._asdict() for p in self.operating_points],
            "watermarked": self.watermarked._asdict(),
            "clean": self.clean._asdict(),
            "skld": self.skld,
            **self.extra,
        }


def detection_report(watermarked, clean, fpr_levels=FPR_LEVELS, bins=KLD_BINS):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        points = tpr_at_fpr(watermarked, clean, fpr_levels)
    return DetectionReport(
        auc=roc_auc(watermarked, clean),
        operating_points=points,
        watermarked=summarize(watermarked),
        clean=summarize(clean),
        skld=symmetric_kld(watermarked, clean, bins),
    )
