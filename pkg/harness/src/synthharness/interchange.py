"""Writers/readers for the tensor interchange format and the JSON-Lines
manifest/prediction files consumed by the salaudit CLI.

Implemented from the documented file layout (magic "GSAL", little-endian
u32 header length, JSON header, raw float32 payload) rather than by
importing the auditing package: the harness talks to it only through files
and the CLI.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GSAL"


def write_tensor(values: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    header = json.dumps(
        {"dtype": "f32", "order": "row-major", "shape": list(arr.shape)},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    return np.frombuffer(raw[8 + hlen :], dtype="<f4").reshape(header["shape"])


def write_manifest(classes, rows, path) -> None:
    """rows: dicts with image_id, label, image, mask, saliency, gradients,
    activations, layer_gradients, split."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"classes": list(classes)}) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_manifest(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    header = json.loads(lines[0])
    return header["classes"], [json.loads(ln) for ln in lines[1:]]


def write_predictions(records, path) -> None:
    """records: iterable of (image_id, true_class, confidences)."""
    with open(path, "w") as fh:
        for image_id, true_class, conf in records:
            fh.write(
                json.dumps(
                    {
                        "image_id": image_id,
                        "true_class": int(true_class),
                        "confidences": [float(c) for c in conf],
                    }
                )
                + "\n"
            )
