"""Small-CNN training and tensor export.

Trains a three-conv-block CNN on a generated dataset and, for every
validation image, exports the tensors the auditing CLI composes saliency
from: per-class gradient*input pixel attributions (channel-summed), the
final conv block's activations, the per-class gradients of that block, and
softmax confidence vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .interchange import read_manifest, read_tensor, write_manifest, write_predictions, write_tensor


class TrainingDiverged(RuntimeError):
    pass


class SmallCNN(nn.Module):
    def __init__(self, n_classes: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.final_conv = nn.Conv2d(32, 32, 3, padding=1)
        self.head = nn.Linear(32, n_classes)

    def forward(self, x):
        z = torch.relu(self.final_conv(self.features(x)))
        return self.head(z.mean(dim=(2, 3))), z


def _load_split(entries):
    xs, ys, ids = [], [], []
    for row in entries:
        img = read_tensor(row["image"])  # H, W, 3
        xs.append(np.transpose(img, (2, 0, 1)))
        ys.append(row["class_index"])
        ids.append(row["image_id"])
    return (
        torch.tensor(np.stack(xs), dtype=torch.float32),
        torch.tensor(ys, dtype=torch.long),
        ids,
    )


@dataclass
class TrainResult:
    val_accuracy: float
    manifest_path: Path
    predictions_path: Path
    mean_abs_completeness_residual: float


def train_and_export(
    manifest_path,
    out_dir,
    epochs: int = 15,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    min_val_accuracy: float = 0.0,
) -> TrainResult:
    """Train on the manifest's train split, export audit tensors for the
    val split, and write an augmented manifest plus predictions.jsonl.

    Classes are balanced by construction in the generator, so no
    re-weighting is applied. Raises TrainingDiverged when validation
    accuracy ends below min_val_accuracy.
    """
    torch.manual_seed(seed)
    classes, rows = read_manifest(manifest_path)
    for row in rows:
        row["class_index"] = classes.index(row["label"])
    train_rows = [r for r in rows if r["split"] == "train"]
    val_rows = [r for r in rows if r["split"] == "val"]
    x_train, y_train, _ = _load_split(train_rows)
    x_val, y_val, val_ids = _load_split(val_rows)

    model = SmallCNN(len(classes))
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    n = x_train.shape[0]
    gen = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb, yb = x_train[idx], y_train[idx]
            # light augmentation: random horizontal flip per batch
            if torch.rand((), generator=gen) < 0.5:
                xb = torch.flip(xb, dims=[3])
            opt.zero_grad()
            logits, _ = model(xb)
            F.cross_entropy(logits, yb).backward()
            opt.step()

    model.eval()
    with torch.no_grad():
        logits, _ = model(x_val)
        val_accuracy = float((logits.argmax(1) == y_val).float().mean())
    if val_accuracy < min_val_accuracy:
        raise TrainingDiverged(
            f"validation accuracy {val_accuracy:.3f} below floor {min_val_accuracy}"
        )

    out = Path(out_dir)
    for sub in ("gradients", "activations", "layer_gradients"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    k = len(classes)
    pred_records = []
    residuals = []
    by_id = {r["image_id"]: r for r in rows}
    for i, image_id in enumerate(val_ids):
        x = x_val[i : i + 1].clone().requires_grad_(True)
        logits, acts = model(x)
        probs = torch.softmax(logits, dim=1)

        grad_input = np.zeros((k,) + x.shape[2:], dtype=np.float32)
        layer_grads = np.zeros((k,) + tuple(acts.shape[1:]), dtype=np.float32)
        for c in range(k):
            gx, ga = torch.autograd.grad(
                probs[0, c], [x, acts], retain_graph=True, allow_unused=False
            )
            grad_input[c] = (gx[0] * x[0]).sum(dim=0).detach().numpy()
        for c in range(k):
            (ga,) = torch.autograd.grad(
                logits[0, c], [acts], retain_graph=True
            )
            layer_grads[c] = ga[0].detach().numpy()

        conf = probs[0].detach().numpy().astype(np.float64)
        conf = conf / conf.sum()  # exact softmax normalization for export
        pred = int(np.argmax(conf))
        residuals.append(abs(float(grad_input[pred].sum()) - float(conf[pred])))

        g_path = out / "gradients" / f"{image_id}.gst"
        a_path = out / "activations" / f"{image_id}.gst"
        lg_path = out / "layer_gradients" / f"{image_id}.gst"
        write_tensor(grad_input, g_path)
        write_tensor(acts[0].detach().numpy().astype(np.float32), a_path)
        write_tensor(layer_grads, lg_path)
        row = by_id[image_id]
        row["gradients"] = str(g_path)
        row["activations"] = str(a_path)
        row["layer_gradients"] = str(lg_path)
        pred_records.append((image_id, row["class_index"], conf))

    for row in rows:
        row.pop("class_index", None)
    manifest_out = out / "manifest.jsonl"
    write_manifest(classes, rows, manifest_out)
    predictions_out = out / "predictions.jsonl"
    write_predictions(pred_records, predictions_out)
    summary = {
        "val_accuracy": val_accuracy,
        "n_val": len(val_ids),
        "mean_abs_completeness_residual": float(np.mean(residuals)),
    }
    with open(out / "train_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return TrainResult(
        val_accuracy=val_accuracy,
        manifest_path=manifest_out,
        predictions_path=predictions_out,
        mean_abs_completeness_residual=float(np.mean(residuals)),
    )
