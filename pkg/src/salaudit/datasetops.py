"""Dataset construction and bias accounting.

Co-occurrence tables count, per class, how many images carry the artefact
(mask larger than a pixel threshold). The unbiased sampling plan keeps all
artefact images and adds a seeded random draw of artefact-free images in a
fixed per-class ratio, which forces P(class | artefact) = P(class | no
artefact). Ablation replaces non-artefact pixels by the image's mean pixel.

Sampling uses a SplitMix64 generator so plans are reproducible across
languages. State update per draw (all arithmetic mod 2^64):

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    output = z ^ (z >> 31)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ArtefactMask, DatasetManifest, PredictionRecord, Tensor
from .errors import BadRatio, InsufficientUninked, MissingMask, ShapeMismatch

DEFAULT_MIN_INK_PIXELS = 100

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Minimal 64-bit SplitMix generator (see module docstring)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection of the biased tail."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n


@dataclass(frozen=True)
class ClassCooccurrence:
    inked: int
    uninked: int

    @property
    def p_ink_given_class(self) -> float:
        total = self.inked + self.uninked
        return self.inked / total if total else 0.0


@dataclass(frozen=True)
class CooccurrenceTable:
    per_class: dict[str, ClassCooccurrence]
    overall_p_ink: float


@dataclass(frozen=True)
class SamplingPlan:
    selected_ids: tuple[str, ...]
    seed: int
    per_class_counts: dict[str, ClassCooccurrence]


def is_inked(mask: ArtefactMask, min_pixels: int = DEFAULT_MIN_INK_PIXELS) -> bool:
    return mask.pixel_count > min_pixels  # strictly more than min_pixels


def _mask_for(masks: dict, image_id: str) -> ArtefactMask:
    if image_id not in masks:
        raise MissingMask(f"no artefact mask for image '{image_id}'")
    return masks[image_id]


def cooccurrence(
    manifest: DatasetManifest,
    masks: dict[str, ArtefactMask],
    min_pixels: int = DEFAULT_MIN_INK_PIXELS,
) -> CooccurrenceTable:
    counts = {name: [0, 0] for name in manifest.classes}
    total_inked = 0
    for entry in manifest.entries:
        inked = is_inked(_mask_for(masks, entry.image_id), min_pixels)
        counts[entry.label][0 if inked else 1] += 1
        total_inked += inked
    n = len(manifest.entries)
    return CooccurrenceTable(
        per_class={
            name: ClassCooccurrence(inked=c[0], uninked=c[1])
            for name, c in counts.items()
        },
        overall_p_ink=total_inked / n if n else 0.0,
    )


def unbiased_plan(
    manifest: DatasetManifest,
    masks: dict[str, ArtefactMask],
    ratio: float = 0.5,
    seed: int = 0,
    min_pixels: int = DEFAULT_MIN_INK_PIXELS,
) -> SamplingPlan:
    """All artefact images plus floor(ratio * inked_c) randomly drawn
    artefact-free images per class c. Pools are iterated in class order over
    image_id-sorted candidates, with one sequential SplitMix64 stream, so a
    given (manifest, seed) always yields the same plan."""
    if not ratio > 0:
        raise BadRatio(f"ratio must be positive, got {ratio}")
    inked_by_class: dict[str, list[str]] = {c: [] for c in manifest.classes}
    uninked_by_class: dict[str, list[str]] = {c: [] for c in manifest.classes}
    for entry in manifest.entries:
        if is_inked(_mask_for(masks, entry.image_id), min_pixels):
            inked_by_class[entry.label].append(entry.image_id)
        else:
            uninked_by_class[entry.label].append(entry.image_id)
    rng = SplitMix64(seed)
    selected: list[str] = []
    per_class: dict[str, ClassCooccurrence] = {}
    for name in manifest.classes:
        inked = inked_by_class[name]
        pool = sorted(uninked_by_class[name])
        want = math.floor(ratio * len(inked))
        if len(pool) < want:
            raise InsufficientUninked(
                f"class '{name}': need {want} artefact-free images, pool has "
                f"{len(pool)}"
            )
        # partial Fisher-Yates over the sorted pool
        for i in range(want):
            j = i + rng.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        selected.extend(inked)
        selected.extend(pool[:want])
        per_class[name] = ClassCooccurrence(inked=len(inked), uninked=want)
    return SamplingPlan(
        selected_ids=tuple(selected), seed=seed, per_class_counts=per_class
    )


def apply_plan(manifest: DatasetManifest, plan: SamplingPlan) -> DatasetManifest:
    """Sub-manifest containing the plan's images, in manifest order."""
    keep = set(plan.selected_ids)
    return DatasetManifest(
        classes=manifest.classes,
        entries=tuple(e for e in manifest.entries if e.image_id in keep),
    )


def ink_only_filter(
    manifest: DatasetManifest,
    masks: dict[str, ArtefactMask],
    min_pixels: int = DEFAULT_MIN_INK_PIXELS,
) -> DatasetManifest:
    """Keep only images whose mask exceeds min_pixels, preserving order."""
    entries = tuple(
        e
        for e in manifest.entries
        if is_inked(_mask_for(masks, e.image_id), min_pixels)
    )
    return DatasetManifest(classes=manifest.classes, entries=entries)


KEEP_ARTEFACT = "keep_artefact"


def ablate(image: Tensor, mask: ArtefactMask, mode: str = KEEP_ARTEFACT) -> Tensor:
    """Replace non-artefact pixels with the image's per-channel mean pixel
    (mean taken over all pixels of the original image)."""
    if mode != KEEP_ARTEFACT:
        raise ValueError(f"unknown ablation mode '{mode}'")
    img = image.values
    if img.ndim != 3 or img.shape[:2] != mask.bits.shape:
        raise ShapeMismatch(
            f"image {img.shape} incompatible with mask {mask.bits.shape}"
        )
    mean_pixel = img.reshape(-1, img.shape[2]).mean(axis=0, dtype=np.float64)
    out = np.where(
        mask.bits[:, :, None], img.astype(np.float64), mean_pixel[None, None, :]
    )
    return Tensor(out.astype(np.float32))


@dataclass(frozen=True)
class InvarianceReport:
    n_pairs: int
    invariant: int
    change_counts: dict[int, dict[int, int]]  # original class -> new class -> count

    @property
    def invariance_fraction(self) -> float:
        return self.invariant / self.n_pairs if self.n_pairs else 0.0


def prediction_invariance(
    original: dict[str, PredictionRecord], transformed: dict[str, PredictionRecord]
) -> InvarianceReport:
    """Fraction of shared images whose predicted class survives a transform
    (e.g. ablation), plus the distribution of prediction changes."""
    shared = sorted(set(original) & set(transformed))
    invariant = 0
    changes: dict[int, dict[int, int]] = {}
    for image_id in shared:
        before = original[image_id].predicted_class
        after = transformed[image_id].predicted_class
        if before == after:
            invariant += 1
        else:
            changes.setdefault(before, {}).setdefault(after, 0)
            changes[before][after] += 1
    return InvarianceReport(
        n_pairs=len(shared), invariant=invariant, change_counts=changes
    )
