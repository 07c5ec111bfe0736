import json

import numpy as np
import pytest

from salaudit.core import SaliencyMap, ArtefactMask, Tensor, save_tensor


def make_map(values, image_id="img", method="external", target=0):
    return SaliencyMap(
        image_id=image_id,
        method=method,
        target_class=target,
        values=np.asarray(values, dtype=np.float64),
    )


def make_mask(bits, image_id="img"):
    return ArtefactMask(image_id=image_id, bits=np.asarray(bits, dtype=bool))


@pytest.fixture
def synthetic_dataset(tmp_path):
    """Small on-disk dataset: manifest + external saliency + masks +
    predictions, suitable for driving the audit end to end."""
    rng = np.random.default_rng(7)
    classes = ["alpha", "beta"]
    n_per_class = 10
    h = w = 8
    lines = [json.dumps({"classes": classes})]
    pred_lines = []
    for ci, cls in enumerate(classes):
        for i in range(n_per_class):
            image_id = f"{cls}{i:02d}"
            sal = rng.random((h, w))
            mask = np.zeros((h, w))
            # one or two full rows of artefact (8 or 16 pixels)
            for row in range(1 + i % 2):
                mask[(rng.integers(0, h) + row) % h, :] = 1.0
            sal_path = tmp_path / f"{image_id}_sal.gst"
            mask_path = tmp_path / f"{image_id}_mask.gst"
            save_tensor(Tensor(sal.astype(np.float32)), sal_path)
            save_tensor(Tensor(mask.astype(np.float32)), mask_path)
            lines.append(
                json.dumps(
                    {
                        "image_id": image_id,
                        "label": cls,
                        "image": None,
                        "mask": str(mask_path),
                        "saliency": {"external": str(sal_path)},
                        "gradients": None,
                        "activations": None,
                        "split": "val",
                    }
                )
            )
            conf = rng.dirichlet([2.0, 2.0])
            pred_lines.append(
                json.dumps(
                    {
                        "image_id": image_id,
                        "true_class": ci,
                        "confidences": conf.tolist(),
                    }
                )
            )
    manifest_path = tmp_path / "manifest.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n")
    predictions_path = tmp_path / "predictions.jsonl"
    predictions_path.write_text("\n".join(pred_lines) + "\n")
    return {
        "dir": tmp_path,
        "manifest": manifest_path,
        "predictions": predictions_path,
        "classes": classes,
    }
