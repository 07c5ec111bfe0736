"""Training and end-to-end audit tests. These train a real (small) CNN and
drive the salaudit CLI as a subprocess, so they take a minute or two."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from synthharness.interchange import read_manifest, read_tensor
from synthharness.synth import SyntheticSpec, generate_dataset
from synthharness.train import TrainingDiverged, train_and_export


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    spec = SyntheticSpec(
        n_classes=3,
        images_per_class=120,
        cooccurrence=(0.5, 0.5, 0.5),
        seed=3,
    )
    manifest = generate_dataset(spec, root / "data")
    result = train_and_export(manifest, root / "model", epochs=12, seed=3)
    return {"root": root, "result": result}


def test_unbiased_model_reaches_accuracy_floor(trained):
    assert trained["result"].val_accuracy >= 0.90


def test_training_diverged_guard(trained):
    with pytest.raises(TrainingDiverged):
        train_and_export(
            trained["root"] / "data" / "manifest.jsonl",
            trained["root"] / "model2",
            epochs=0,
            seed=3,
            min_val_accuracy=0.9,
        )


def test_exported_confidences_are_softmax(trained):
    path = trained["result"].predictions_path
    for line in Path(path).read_text().splitlines():
        obj = json.loads(line)
        conf = np.array(obj["confidences"])
        assert abs(conf.sum() - 1.0) < 1e-5
        assert (conf >= 0).all()


def test_exported_tensor_shapes(trained):
    _, rows = read_manifest(trained["result"].manifest_path)
    val = [r for r in rows if r["split"] == "val"]
    assert val and all(r["gradients"] for r in val)
    row = val[0]
    assert read_tensor(row["gradients"]).shape == (3, 32, 32)
    assert read_tensor(row["activations"]).shape == (32, 8, 8)
    assert read_tensor(row["layer_gradients"]).shape == (3, 32, 8, 8)


def test_completeness_residual_reported(trained):
    # reported, not asserted against a threshold: the harness only measures
    summary = json.loads(
        (Path(trained["result"].manifest_path).parent / "train_summary.json").read_text()
    )
    assert "mean_abs_completeness_residual" in summary
    assert np.isfinite(summary["mean_abs_completeness_residual"])


def run_audit(manifest, predictions, out, *extra):
    return subprocess.run(
        [
            sys.executable,
            "-m",
            "salaudit.cli",
            "audit",
            "--manifest",
            str(manifest),
            "--predictions",
            str(predictions),
            "--split",
            "val",
            "--min-ink-pixels",
            "0",
            "--out",
            str(out),
            *extra,
        ],
        capture_output=True,
        text=True,
    )


@pytest.mark.parametrize("method", ["gradcam", "competitive"])
def test_cli_audit_end_to_end(trained, tmp_path, method):
    out = tmp_path / method
    proc = run_audit(
        trained["result"].manifest_path,
        trained["result"].predictions_path,
        out,
        "--method",
        method,
    )
    assert proc.returncode == 0, proc.stderr
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == method
    assert report["n_images"] > 0
    assert (out / "per_image.csv").exists()
    assert (out / "rra_curve.csv").exists()


def test_cli_audit_loadable_tensors_round_trip(trained):
    # every exported tensor loads cleanly through the auditing package
    from salaudit.core import load_tensor

    _, rows = read_manifest(trained["result"].manifest_path)
    for row in rows:
        if row["split"] == "val":
            for key in ("gradients", "activations", "layer_gradients", "mask", "image"):
                load_tensor(row[key])
            break
