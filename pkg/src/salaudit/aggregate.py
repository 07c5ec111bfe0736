"""Per-image and dataset-level aggregation of artefact saliency.

Two per-image statistics: the mean saliency over artefact pixels, and the
fraction of the top-percentile most-salient pixels that fall inside the
artefact (scale-invariant "peak" aggregation). Dataset-level machinery:
z-score normalization over the pixel population and per-class summaries
with Student-t confidence intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as sps

from .core import ArtefactMask, SaliencyMap
from .errors import (
    BadPercentile,
    DegenerateDistribution,
    EmptyInput,
    EmptyMask,
    ShapeMismatch,
)

MEAN = "mean"
PEAK = "peak"
DEFAULT_PEAK_PERCENTILE = 98.0


@dataclass(frozen=True)
class ImageSaliencyStat:
    image_id: str
    mean_artefact: float
    peak_fraction: float
    artefact_pixels: int
    true_class: int
    predicted_class: int
    correct: bool

    def value(self, aggregation: str) -> float:
        return self.mean_artefact if aggregation == MEAN else self.peak_fraction


@dataclass(frozen=True)
class ClassSummary:
    mean: float
    ci_low: float
    ci_high: float
    n: int


@dataclass(frozen=True)
class GlobalSaliencyReport:
    per_class: dict[str, ClassSummary]
    interclass_variance: float
    normalization: tuple[float, float] | None  # (mu, sigma), None for peak
    aggregation: str
    method: str


def _check_shapes(map_: SaliencyMap, mask: ArtefactMask):
    if map_.values.shape != mask.bits.shape:
        raise ShapeMismatch(
            f"map {map_.values.shape} vs mask {mask.bits.shape} for "
            f"'{map_.image_id}'"
        )


def mean_artefact_saliency(map_: SaliencyMap, mask: ArtefactMask) -> float:
    """Arithmetic mean of saliency over mask-true pixels."""
    _check_shapes(map_, mask)
    if mask.pixel_count == 0:
        raise EmptyMask(f"'{map_.image_id}': mask has no artefact pixels")
    return float(map_.values[mask.bits].mean(dtype=np.float64))


def top_pixel_count(total: int, percentile: float) -> int:
    """Size of the top-percentile pixel set: ceil((1 - p/100) * total).

    The product is rounded to 9 decimals before the ceiling so that exact
    fractions (e.g. 2% of 400) are not bumped up by float noise.
    """
    return max(1, math.ceil(round((100.0 - percentile) * total / 100.0, 9)))


def peak_fraction(
    map_: SaliencyMap, mask: ArtefactMask, percentile: float = DEFAULT_PEAK_PERCENTILE
) -> float:
    """Fraction of the top-percentile most-salient pixels lying inside the
    artefact. Ties are broken by row-major pixel index, lower index first,
    which makes the statistic exactly invariant to rescaling the map.
    """
    _check_shapes(map_, mask)
    if not 0.0 < percentile < 100.0:
        raise BadPercentile(f"percentile {percentile} outside (0, 100)")
    flat = map_.values.ravel()
    k = top_pixel_count(flat.size, percentile)
    order = np.argsort(-flat, kind="stable")  # descending value, then index
    top = order[:k]
    return float(mask.bits.ravel()[top].mean(dtype=np.float64))


def pixel_population_moments(maps) -> tuple[float, float]:
    """Mean and population standard deviation over every pixel of every map.

    Maps are reduced in image_id-sorted order so the result is independent
    of input ordering (and of any parallel map production upstream).
    """
    ordered = sorted(maps, key=lambda m: m.image_id)
    if not ordered:
        raise EmptyInput("no saliency maps to normalize over")
    n = sum(m.values.size for m in ordered)
    total = math.fsum(float(m.values.sum(dtype=np.float64)) for m in ordered)
    mu = total / n
    sq = math.fsum(
        float(((m.values - mu) ** 2).sum(dtype=np.float64)) for m in ordered
    )
    sigma = math.sqrt(sq / n)
    return mu, sigma


def zscore_normalize(
    stats: list[ImageSaliencyStat], maps
) -> tuple[list[ImageSaliencyStat], float, float]:
    """Replace each mean_artefact by its z-score under the dataset-wide pixel
    population moments. peak_fraction is left untouched (already
    scale-invariant)."""
    mu, sigma = pixel_population_moments(maps)
    if sigma <= 0.0:
        raise DegenerateDistribution("pixel population has zero variance")
    out = [
        replace(s, mean_artefact=(s.mean_artefact - mu) / sigma) for s in stats
    ]
    return out, mu, sigma


def per_class_report(
    stats: list[ImageSaliencyStat],
    classes,
    aggregation: str = MEAN,
    method: str = "",
    normalization: tuple[float, float] | None = None,
) -> GlobalSaliencyReport:
    """Per-class mean of the chosen per-image statistic with a 95% Student-t
    interval; inter-class variance is the population variance of the
    per-class means. Grouping is by true class."""
    if not stats:
        raise EmptyInput("no per-image statistics")
    per_class: dict[str, ClassSummary] = {}
    means = []
    for idx, name in enumerate(classes):
        vals = sorted(s.value(aggregation) for s in stats if s.true_class == idx)
        if not vals:
            continue
        n = len(vals)
        mean = math.fsum(vals) / n
        if n >= 2:
            sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))
            half = float(sps.t.ppf(0.975, n - 1)) * sd / math.sqrt(n)
        else:
            half = 0.0
        per_class[name] = ClassSummary(
            mean=mean, ci_low=mean - half, ci_high=mean + half, n=n
        )
        means.append(mean)
    grand = math.fsum(means) / len(means)
    variance = math.fsum((m - grand) ** 2 for m in means) / len(means)
    return GlobalSaliencyReport(
        per_class=per_class,
        interclass_variance=variance,
        normalization=normalization,
        aggregation=aggregation,
        method=method,
    )
