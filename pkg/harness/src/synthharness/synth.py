"""Synthetic artefact-biased image dataset.

Class identity is carried by a drawn shape (disk / vertical stripes /
horizontal stripes); the
artefact is a saturated magenta blob placed independently of the shape,
with a per-class occurrence probability. Ground-truth masks mark exactly
the blob pixels, so audits against these masks have no segmentation noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .interchange import write_manifest, write_tensor


class BadSpec(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 3
    images_per_class: int = 200
    image_size: int = 32
    cooccurrence: tuple[float, ...] = (0.9, 0.1, 0.1)
    blob_radius: tuple[int, int] = (4, 6)
    blob_color: tuple[float, float, float] = (0.95, 0.05, 0.85)
    # per-image blob opacity range; (1, 1) paints the blob fully opaque
    blob_alpha: tuple[float, float] = (1.0, 1.0)
    shape_contrast: float = 0.3
    # multiplicative per-image contrast jitter: contrast * U(1-j, 1+j)
    contrast_jitter: float = 0.0
    # probability that an image carries no shape at all; such images are
    # only classifiable through whatever co-occurring cues exist
    shape_dropout: float = 0.0
    noise_sigma: float = 0.1
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2 or self.n_classes > 6:
            raise BadSpec(f"n_classes must be in [2, 6], got {self.n_classes}")
        if len(self.cooccurrence) != self.n_classes:
            raise BadSpec("cooccurrence vector length must equal n_classes")
        if any(not 0.0 <= p <= 1.0 for p in self.cooccurrence):
            raise BadSpec("cooccurrence entries must lie in [0, 1]")
        if self.images_per_class < 5:
            raise BadSpec("need at least 5 images per class")
        if not 0.0 < self.blob_alpha[0] <= self.blob_alpha[1] <= 1.0:
            raise BadSpec("blob_alpha must satisfy 0 < low <= high <= 1")
        if not 0.0 <= self.contrast_jitter < 1.0:
            raise BadSpec("contrast_jitter must lie in [0, 1)")
        if not 0.0 <= self.shape_dropout < 1.0:
            raise BadSpec("shape_dropout must lie in [0, 1)")


def _draw_shape(img, class_index, rng, contrast, size):
    """Add the class signal in-place. Shapes are grayscale bumps so the
    (colored) artefact blob stays visually distinct."""
    yy, xx = np.mgrid[0:size, 0:size]
    cy = rng.integers(size // 4, 3 * size // 4)
    cx = rng.integers(size // 4, 3 * size // 4)
    kind = class_index % 3
    if kind == 0:  # disk
        r = rng.integers(size // 5, size // 3)
        sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif kind == 1:  # vertical stripes
        period = int(rng.integers(4, 7))
        phase = int(rng.integers(0, period))
        sel = ((xx + phase) % period) < 2
    else:  # horizontal stripes
        period = int(rng.integers(4, 7))
        phase = int(rng.integers(0, period))
        sel = ((yy + phase) % period) < 2
    img[sel] += contrast


def _draw_blob(img, mask, rng, spec):
    size = spec.image_size
    r = int(rng.integers(spec.blob_radius[0], spec.blob_radius[1] + 1))
    cy = int(rng.integers(r, size - r))
    cx = int(rng.integers(r, size - r))
    yy, xx = np.mgrid[0:size, 0:size]
    sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    color = np.array(spec.blob_color) + rng.normal(0, 0.02, 3)
    alpha = rng.uniform(spec.blob_alpha[0], spec.blob_alpha[1])
    img[sel] = (1 - alpha) * img[sel] + alpha * np.clip(color, 0.0, 1.0)
    mask[sel] = True


def generate_dataset(spec: SyntheticSpec, out_dir) -> Path:
    """Write images, masks and a manifest under out_dir; returns the
    manifest path. Deterministic byte-for-byte at fixed seed."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    classes = [f"c{k}" for k in range(spec.n_classes)]
    n_val = max(1, int(round(spec.val_fraction * spec.images_per_class)))
    rows = []
    for ci, label in enumerate(classes):
        for i in range(spec.images_per_class):
            image_id = f"{label}_{i:04d}"
            size = spec.image_size
            img = np.full((size, size), 0.45) + rng.normal(
                0, spec.noise_sigma, (size, size)
            )
            contrast = spec.shape_contrast * (
                1.0 + spec.contrast_jitter * rng.uniform(-1.0, 1.0)
            )
            if rng.random() < spec.shape_dropout:
                contrast = 0.0
            _draw_shape(img, ci, rng, contrast, size)
            img = np.clip(img, 0.0, 1.0)
            img = np.repeat(img[:, :, None], 3, axis=2)
            mask = np.zeros((size, size), dtype=bool)
            if rng.random() < spec.cooccurrence[ci]:
                _draw_blob(img, mask, rng, spec)
            image_path = out / "images" / f"{image_id}.gst"
            mask_path = out / "masks" / f"{image_id}.gst"
            write_tensor(img.astype(np.float32), image_path)
            write_tensor(mask.astype(np.float32), mask_path)
            rows.append(
                {
                    "image_id": image_id,
                    "label": label,
                    "image": str(image_path),
                    "mask": str(mask_path),
                    "saliency": {},
                    "gradients": None,
                    "activations": None,
                    "layer_gradients": None,
                    "split": "val" if i >= spec.images_per_class - n_val else "train",
                }
            )
    manifest_path = out / "manifest.jsonl"
    write_manifest(classes, rows, manifest_path)
    return manifest_path
