"""Domain types, the binary tensor interchange format, and manifest parsing.

Tensor interchange file layout (extension ``.gst``):

    bytes 0-3    magic "GSAL"
    bytes 4-7    unsigned little-endian header length L
    bytes 8..8+L UTF-8 JSON header {"dtype":"f32","order":"row-major","shape":[...]}
    remainder    raw little-endian float32 payload, row-major

The writer emits a canonical header (no whitespace, fixed key order), so
save(load(p)) is byte-identical to p for any file written by this module.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    DuplicateImageId,
    MissingField,
    NonFiniteValue,
    ShapeMismatch,
    UnknownClassLabel,
)

MAGIC = b"GSAL"

GRADCAM = "gradcam"
COMPETITIVE = "competitive"
EXTERNAL = "external"
METHODS = (GRADCAM, COMPETITIVE, EXTERNAL)


@dataclass(frozen=True)
class Tensor:
    """Row-major float32 array. Values are guaranteed finite."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise NonFiniteValue("tensor contains NaN or Inf")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def save_tensor(tensor: Tensor, path) -> None:
    header = json.dumps(
        {"dtype": "f32", "order": "row-major", "shape": list(tensor.shape)},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(tensor.values.astype("<f4").tobytes(order="C"))


def load_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise BadHeader(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise BadHeader(f"{path}: unparseable header: {exc}") from exc
    if header.get("dtype") != "f32" or header.get("order") != "row-major":
        raise BadHeader(f"{path}: unsupported dtype/order in header")
    shape = header.get("shape")
    if not isinstance(shape, list) or not all(
        isinstance(d, int) and d > 0 for d in shape
    ):
        raise BadHeader(f"{path}: invalid shape {shape!r}")
    payload = raw[8 + hlen :]
    n = int(np.prod(shape)) if shape else 1
    if len(payload) != 4 * n:
        raise ShapeMismatch(
            f"{path}: header shape {shape} implies {n} floats, payload has "
            f"{len(payload) // 4}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{path}: payload contains NaN or Inf")
    return Tensor(arr)


@dataclass(frozen=True)
class SaliencyMap:
    image_id: str
    method: str
    target_class: int
    values: np.ndarray  # H x W float

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch(f"saliency map must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"saliency map {self.image_id}: non-finite values")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class ArtefactMask:
    image_id: str
    bits: np.ndarray  # H x W bool

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "bits", arr.astype(bool))

    @property
    def pixel_count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def from_tensor(cls, image_id: str, tensor: Tensor) -> "ArtefactMask":
        # tolerate blurred-edge masks: threshold at > 0.5
        return cls(image_id=image_id, bits=tensor.values > 0.5)


@dataclass(frozen=True)
class PredictionRecord:
    image_id: str
    true_class: int
    confidences: np.ndarray
    predicted_class: int = field(init=False)

    def __post_init__(self):
        conf = np.asarray(self.confidences, dtype=np.float64)
        if conf.ndim != 1 or conf.size == 0:
            raise ShapeMismatch(f"{self.image_id}: confidences must be a 1-D vector")
        if abs(float(conf.sum()) - 1.0) > 1e-5:
            raise NonFiniteValue(
                f"{self.image_id}: confidences sum to {conf.sum():.6f}, expected 1"
            )
        object.__setattr__(self, "confidences", conf)
        # argmax breaks ties toward the lowest index
        object.__setattr__(self, "predicted_class", int(np.argmax(conf)))

    @property
    def confidence(self) -> float:
        """max(confidences): the model's confidence for this image."""
        return float(self.confidences[self.predicted_class])

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.true_class


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    label: str
    class_index: int
    image: str | None
    mask: str | None
    saliency: dict
    gradients: str | None
    activations: str | None
    layer_gradients: str | None
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    classes: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]

    def class_index(self, label: str) -> int:
        return self.classes.index(label)


_REQUIRED_ENTRY_FIELDS = ("image_id", "label")


def load_manifest(path) -> DatasetManifest:
    """Parse a JSON-Lines manifest. First line is {"classes": [...]}."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise MissingField(f"{path}: empty manifest")
    header = json.loads(lines[0])
    classes = header.get("classes")
    if not isinstance(classes, list) or not classes:
        raise MissingField(f"{path}: header line lacks a 'classes' list")
    entries = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        obj = json.loads(line)
        for key in _REQUIRED_ENTRY_FIELDS:
            if key not in obj:
                raise MissingField(f"{path}:{lineno}: missing field '{key}'")
        image_id = obj["image_id"]
        label = obj["label"]
        if image_id in seen:
            raise DuplicateImageId(f"{path}:{lineno}: duplicate image_id '{image_id}'")
        seen.add(image_id)
        if label not in classes:
            raise UnknownClassLabel(
                f"{path}:{lineno}: label '{label}' not in class list"
            )
        entries.append(
            ManifestEntry(
                image_id=image_id,
                label=label,
                class_index=classes.index(label),
                image=obj.get("image"),
                mask=obj.get("mask"),
                saliency=obj.get("saliency") or {},
                gradients=obj.get("gradients"),
                activations=obj.get("activations"),
                layer_gradients=obj.get("layer_gradients"),
                split=obj.get("split", "val"),
            )
        )
    return DatasetManifest(classes=tuple(classes), entries=tuple(entries))


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"classes": list(manifest.classes)}) + "\n")
        for e in manifest.entries:
            fh.write(
                json.dumps(
                    {
                        "image_id": e.image_id,
                        "label": e.label,
                        "image": e.image,
                        "mask": e.mask,
                        "saliency": e.saliency,
                        "gradients": e.gradients,
                        "activations": e.activations,
                        "layer_gradients": e.layer_gradients,
                        "split": e.split,
                    }
                )
                + "\n"
            )


def load_predictions(path) -> dict[str, PredictionRecord]:
    """Load a JSON-Lines prediction file: one record per image.

    Each line: {"image_id": str, "true_class": int, "confidences": [..]}.
    An optional "predicted_class" field is validated against the argmax.
    """
    records: dict[str, PredictionRecord] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        for key in ("image_id", "true_class", "confidences"):
            if key not in obj:
                raise MissingField(f"{path}:{lineno}: missing field '{key}'")
        rec = PredictionRecord(
            image_id=obj["image_id"],
            true_class=int(obj["true_class"]),
            confidences=np.asarray(obj["confidences"], dtype=np.float64),
        )
        if "predicted_class" in obj and int(obj["predicted_class"]) != rec.predicted_class:
            raise NonFiniteValue(
                f"{path}:{lineno}: stored predicted_class disagrees with argmax"
            )
        if rec.image_id in records:
            raise DuplicateImageId(f"{path}:{lineno}: duplicate image_id '{rec.image_id}'")
        records[rec.image_id] = rec
    return records


def save_predictions(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "image_id": rec.image_id,
                        "true_class": rec.true_class,
                        "confidences": [float(c) for c in rec.confidences],
                    }
                )
                + "\n"
            )
