"""Saliency-quality metrics and nonparametric statistics.

Response-rate accuracy curves record model accuracy on nested validation
subsets capped at increasing artefact-saliency thresholds; the (normalized)
trapezoidal area under the curve summarizes how well saliency-on-artefact
predicts model failure. The statistical tests (Kendall tau-b, Levene,
Wilcoxon signed-rank) are implemented from the textbook formulas with
tie-corrected normal/F approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .aggregate import MEAN, ImageSaliencyStat
from .errors import (
    DegenerateDistribution,
    EmptyInput,
    LengthMismatch,
    TooFewGroups,
    TooFewNonzeroDiffs,
    TooFewPoints,
)

KENDALL_TAU = "kendall_tau"
LEVENE = "levene"
WILCOXON_SIGNED_RANK = "wilcoxon_signed_rank"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n: int
    test: str

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n": self.n,
            "test": self.test,
        }


@dataclass(frozen=True)
class RRAPoint:
    threshold_percentile: float
    saliency_threshold: float
    n_images: int
    accuracy: float


@dataclass(frozen=True)
class RRACurve:
    points: tuple[RRAPoint, ...]
    aurrac: float


def rra_curve(
    stats: list[ImageSaliencyStat], n_ticks: int = 10, aggregation: str = MEAN
) -> RRACurve:
    """Accuracy over subsets of images whose artefact saliency is at most
    the k/n_ticks percentile of the per-image saliency distribution,
    k = 1..n_ticks. The last tick always covers the full set."""
    if not stats:
        raise EmptyInput("no per-image statistics")
    if n_ticks < 2:
        raise TooFewPoints(f"n_ticks must be >= 2, got {n_ticks}")
    sal = np.array([s.value(aggregation) for s in stats], dtype=np.float64)
    correct = np.array([s.correct for s in stats], dtype=bool)
    points = []
    for k in range(1, n_ticks + 1):
        pct = k * 100.0 / n_ticks
        thr = float(np.percentile(sal, pct, method="linear"))
        sel = sal <= thr
        n = int(sel.sum())
        points.append(
            RRAPoint(
                threshold_percentile=pct,
                saliency_threshold=thr,
                n_images=n,
                accuracy=float(correct[sel].mean(dtype=np.float64)),
            )
        )
    curve = RRACurve(points=tuple(points), aurrac=0.0)
    return RRACurve(points=curve.points, aurrac=aurrac(curve))


def aurrac(curve: RRACurve) -> float:
    """Trapezoidal area under (threshold_percentile/100, accuracy),
    normalized by the spanned domain width."""
    xs = np.array([p.threshold_percentile / 100.0 for p in curve.points])
    ys = np.array([p.accuracy for p in curve.points])
    width = xs[-1] - xs[0]
    if width <= 0:
        return float(ys[-1])
    # accuracies lie in [0, 1], so the normalized area does too; rounding in
    # the trapezoid sum can overshoot by an ulp or two
    return float(min(max(np.trapezoid(ys, xs) / width, 0.0), 1.0))


def kendall_tau(x, y) -> TestResult:
    """Kendall's tau-b with tie correction; two-sided p-value from the
    normal approximation of the tau-b statistic."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"x has {x.size} points, y has {y.size}")
    n = x.size
    if n < 2:
        raise TooFewPoints(f"need at least 2 points, got {n}")
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    s = float((dx[iu] * dy[iu]).sum())  # concordant minus discordant

    def tie_sizes(v):
        _, counts = np.unique(v, return_counts=True)
        return counts[counts > 1]

    t = tie_sizes(x)
    u = tie_sizes(y)
    n0 = n * (n - 1) / 2.0
    n1 = float((t * (t - 1) / 2.0).sum())
    n2 = float((u * (u - 1) / 2.0).sum())
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise DegenerateDistribution("all x or all y values tied")
    tau = s / denom

    # tie-corrected variance of S (normal approximation)
    vt = float((t * (t - 1) * (2 * t + 5)).sum())
    vu = float((u * (u - 1) * (2 * u + 5)).sum())
    v0 = n * (n - 1) * (2 * n + 5)
    var_s = (v0 - vt - vu) / 18.0
    var_s += (
        float((t * (t - 1)).sum()) * float((u * (u - 1)).sum()) / (2.0 * n * (n - 1))
    )
    if n > 2:
        var_s += (
            float((t * (t - 1) * (t - 2)).sum())
            * float((u * (u - 1) * (u - 2)).sum())
            / (9.0 * n * (n - 1) * (n - 2))
        )
    if var_s <= 0:
        p = 1.0
    else:
        z = s / math.sqrt(var_s)
        p = min(1.0, 2.0 * float(sps.norm.sf(abs(z))))
    return TestResult(statistic=tau, p_value=p, n=n, test=KENDALL_TAU)


def levene_test(groups, center: str = "mean") -> TestResult:
    """Levene's homogeneity-of-variance test. center="mean" is the classic
    form; center="median" gives the Brown-Forsythe variant."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    k = len(groups)
    if k < 2:
        raise TooFewGroups(f"need at least 2 groups, got {k}")
    if any(g.size < 2 for g in groups):
        raise TooFewPoints("every group needs at least 2 members")
    if center == "mean":
        centers = [g.mean() for g in groups]
    elif center == "median":
        centers = [float(np.median(g)) for g in groups]
    else:
        raise ValueError(f"unknown center '{center}'")
    z = [np.abs(g - c) for g, c in zip(groups, centers)]
    n_i = np.array([g.size for g in groups], dtype=np.float64)
    n_total = float(n_i.sum())
    zbar_i = np.array([zi.mean() for zi in z])
    zbar = float(np.concatenate(z).mean())
    numer = float((n_i * (zbar_i - zbar) ** 2).sum())
    denom = float(sum(((zi - zb) ** 2).sum() for zi, zb in zip(z, zbar_i)))
    if denom == 0.0:
        w = 0.0 if numer == 0.0 else math.inf
        p = 1.0 if numer == 0.0 else 0.0
    else:
        w = (n_total - k) / (k - 1) * numer / denom
        p = float(sps.f.sf(w, k - 1, n_total - k))
    return TestResult(statistic=w, p_value=p, n=int(n_total), test=LEVENE)


WILCOXON_MIN_N = 10  # normal-approximation regime


def wilcoxon_signed_rank(a, b) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Differences are b - a; zero differences are dropped; tied absolute
    differences receive average ranks. The statistic is the sum of ranks of
    positive differences; the p-value uses the normal approximation with
    tie-corrected variance and a continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"a has {a.size} points, b has {b.size}")
    d = b - a
    d = d[d != 0.0]
    n = d.size
    if n < WILCOXON_MIN_N:
        raise TooFewNonzeroDiffs(
            f"need >= {WILCOXON_MIN_N} nonzero differences, got {n}"
        )
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    ties = counts[counts > 1].astype(np.float64)
    var -= float((ties**3 - ties).sum()) / 48.0
    if var <= 0:
        raise DegenerateDistribution("zero variance after tie correction")
    dev = w_plus - mu
    # continuity correction shrinks the deviation toward zero
    z = (dev - 0.5 * np.sign(dev)) / math.sqrt(var)
    p = min(1.0, 2.0 * float(sps.norm.sf(abs(z))))
    return TestResult(statistic=w_plus, p_value=p, n=n, test=WILCOXON_SIGNED_RANK)
