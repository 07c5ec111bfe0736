"""Saliency map composition from exported model tensors.

Two compositors are provided: class-activation mapping from a convolutional
layer's activations and per-class gradients, and competitive gradient-times-
input selection over per-class pixel attributions. Both are pure functions of
their tensor inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import COMPETITIVE, GRADCAM, ArtefactMask, PredictionRecord, SaliencyMap
from .errors import ClassOutOfRange, EmptyActivation, IdMismatch, ShapeMismatch


@dataclass(frozen=True)
class GradientBundle:
    """Raw per-image tensors exported by a model harness.

    per_class_grad_input: K x H x W pixel attribution (gradient * input,
        channel-summed) per target class, or None.
    layer_activations: C x h x w activations of a fixed conv layer, or None.
    layer_gradients: K x C x h x w gradients of that layer per target class,
        or None.
    """

    image_id: str
    per_class_grad_input: np.ndarray | None = None
    layer_activations: np.ndarray | None = None
    layer_gradients: np.ndarray | None = None

    def __post_init__(self):
        acts, grads = self.layer_activations, self.layer_gradients
        if acts is not None and grads is not None:
            if acts.ndim != 3 or grads.ndim != 4:
                raise ShapeMismatch(
                    f"{self.image_id}: expected C,h,w activations and K,C,h,w "
                    f"layer gradients, got {acts.shape} and {grads.shape}"
                )
            if grads.shape[1:] != acts.shape:
                raise ShapeMismatch(
                    f"{self.image_id}: layer gradients {grads.shape} do not "
                    f"match activations {acts.shape}"
                )


def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D array."""
    h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.astype(np.float64, copy=True)

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys = coords(h, out_h)
    xs = coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = arr.astype(np.float64)
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def compose_gradcam(
    bundle: GradientBundle, target_class: int, out_h: int, out_w: int
) -> SaliencyMap:
    """Weighted sum of activation maps, weights = spatial mean of each
    filter's gradient for the target class; negatives clamped to zero, then
    upsampled to out_h x out_w."""
    acts = bundle.layer_activations
    grads = bundle.layer_gradients
    if acts is None or grads is None:
        raise EmptyActivation(f"{bundle.image_id}: bundle lacks layer tensors")
    if acts.size == 0:
        raise EmptyActivation(f"{bundle.image_id}: empty activation tensor")
    k = grads.shape[0]
    if not 0 <= target_class < k:
        raise ClassOutOfRange(
            f"{bundle.image_id}: target class {target_class} out of range [0,{k})"
        )
    h, w = acts.shape[1:]
    if out_h < h or out_w < w:
        raise ShapeMismatch(
            f"{bundle.image_id}: output {out_h}x{out_w} smaller than layer {h}x{w}"
        )
    weights = grads[target_class].astype(np.float64).mean(axis=(1, 2))  # (C,)
    raw = np.tensordot(weights, acts.astype(np.float64), axes=(0, 0))  # (h, w)
    raw = np.maximum(raw, 0.0)
    values = _resize_bilinear(raw, out_h, out_w)
    return SaliencyMap(
        image_id=bundle.image_id,
        method=GRADCAM,
        target_class=target_class,
        values=values,
    )


def compose_competitive(bundle: GradientBundle, target_class: int) -> SaliencyMap:
    """Keep a pixel's attribution only where the target class has strictly
    greater absolute value than every other class; exact ties zero out."""
    g = bundle.per_class_grad_input
    if g is None:
        raise EmptyActivation(f"{bundle.image_id}: bundle lacks grad-input tensor")
    k = g.shape[0]
    if not 0 <= target_class < k:
        raise ClassOutOfRange(
            f"{bundle.image_id}: target class {target_class} out of range [0,{k})"
        )
    target = g[target_class].astype(np.float64)
    if k == 1:
        values = target.copy()
    else:
        others = np.abs(np.delete(g, target_class, axis=0)).max(axis=0)
        values = np.where(np.abs(target) > others, target, 0.0)
    return SaliencyMap(
        image_id=bundle.image_id,
        method=COMPETITIVE,
        target_class=target_class,
        values=values,
    )


def completeness_residual(map_: SaliencyMap, record: PredictionRecord) -> float:
    """Pixel-wise sum of the map minus the model's confidence. Near zero when
    the map distributes the confidence over pixels."""
    if map_.image_id != record.image_id:
        raise IdMismatch(
            f"map is for '{map_.image_id}', record for '{record.image_id}'"
        )
    return float(map_.values.sum(dtype=np.float64) - record.confidence)


def partition_sum_check(
    map_: SaliencyMap, mask: ArtefactMask, record: PredictionRecord
) -> tuple[float, float]:
    """Return (confidence - artefact-pixel sum, complement-pixel sum).

    The two sides agree exactly for a map whose completeness residual is
    zero; their difference always equals the residual.
    """
    if map_.values.shape != mask.bits.shape:
        raise ShapeMismatch(
            f"map {map_.values.shape} vs mask {mask.bits.shape} for "
            f"'{map_.image_id}'"
        )
    artefact_sum = float(map_.values[mask.bits].sum(dtype=np.float64))
    complement_sum = float(map_.values[~mask.bits].sum(dtype=np.float64))
    return record.confidence - artefact_sum, complement_sum
