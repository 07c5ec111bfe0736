import json

import numpy as np
import pytest

from salaudit.audit import AuditConfig, compare_reports, run_audit, report_schema
from salaudit.cli import main
from salaudit.core import Tensor, save_tensor


def audit_args(ds, out, **overrides):
    args = [
        "audit",
        "--manifest",
        str(ds["manifest"]),
        "--predictions",
        str(ds["predictions"]),
        "--method",
        "external",
        "--min-ink-pixels",
        "0",
        "--out",
        str(out),
    ]
    for key, value in overrides.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


def test_audit_happy_path(synthetic_dataset, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(audit_args(synthetic_dataset, out)) == 0
    for name in ("report.json", "per_image.csv", "rra_curve.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["classes"] == synthetic_dataset["classes"]
    assert set(report["per_class"]) == set(synthetic_dataset["classes"])
    assert len(report["per_image"]) == 20


def test_audit_validates_schema(synthetic_dataset, tmp_path):
    import jsonschema

    out = tmp_path / "out"
    main(audit_args(synthetic_dataset, out))
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, report_schema())


def test_audit_missing_mask_names_image(synthetic_dataset, tmp_path, capsys):
    # break one mask file
    broken = None
    lines = synthetic_dataset["manifest"].read_text().splitlines()
    obj = json.loads(lines[3])
    broken = obj["image_id"]
    (synthetic_dataset["dir"] / f"{broken}_mask.gst").unlink()
    out = tmp_path / "out"
    code = main(audit_args(synthetic_dataset, out))
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert broken in err["message"]
    assert not (out / "report.json").exists()


def test_audit_deterministic_across_runs_and_jobs(synthetic_dataset, tmp_path):
    outs = []
    for name, jobs in (("o1", 1), ("o2", 1), ("o4", 4)):
        out = tmp_path / name
        assert main(audit_args(synthetic_dataset, out, seed=3, jobs=jobs)) == 0
        outs.append(out)
    ref = {p: (outs[0] / p).read_bytes() for p in ("report.json", "per_image.csv", "rra_curve.csv")}
    for out in outs[1:]:
        for p, blob in ref.items():
            got = (out / p).read_bytes()
            # the out dir is part of the embedded config; neutralize it
            assert got.replace(str(out).encode(), b"OUT") == blob.replace(
                str(outs[0]).encode(), b"OUT"
            )


def test_audit_subset_classes(synthetic_dataset, tmp_path):
    out = tmp_path / "out"
    assert main(audit_args(synthetic_dataset, out, subset_classes="alpha")) == 0
    assert (out / "rra_curve_subset.csv").exists()
    assert (out / "rra_curve_rest.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert set(report["curves"]) == {"full", "subset", "rest"}


def test_audit_peak_aggregation(synthetic_dataset, tmp_path):
    out = tmp_path / "out"
    assert main(audit_args(synthetic_dataset, out, aggregation="peak")) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["normalization"] is None
    for row in report["per_image"]:
        assert row["value"] == row["peak_fraction"]


def test_compare_self_is_neutral(synthetic_dataset, tmp_path):
    out = tmp_path / "out"
    main(audit_args(synthetic_dataset, out))
    report = json.loads((out / "report.json").read_text())
    comparison = compare_reports(report, report)
    assert all(d == 0.0 for d in comparison["per_class_delta"].values())
    assert comparison["interclass_variance"]["delta"] == 0.0
    assert comparison["tests"]["wilcoxon_paired_images"] == {
        "identical": True,
        "n": 20,
    }


def test_compare_incompatible_classes(synthetic_dataset, tmp_path):
    out = tmp_path / "out"
    main(audit_args(synthetic_dataset, out))
    report = json.loads((out / "report.json").read_text())
    other = dict(report, classes=["x", "y"])
    from salaudit.errors import IncompatibleReports

    with pytest.raises(IncompatibleReports):
        compare_reports(report, other)


def test_compare_cli_writes_json(synthetic_dataset, tmp_path):
    out = tmp_path / "out"
    main(audit_args(synthetic_dataset, out))
    cmp_out = tmp_path / "cmp"
    code = main(
        [
            "compare",
            str(out / "report.json"),
            str(out / "report.json"),
            "--out",
            str(cmp_out),
        ]
    )
    assert code == 0
    assert (cmp_out / "compare.json").exists()


def test_cooc_and_plan_commands(synthetic_dataset, tmp_path):
    out = tmp_path / "cooc"
    code = main(
        [
            "cooc",
            "--manifest",
            str(synthetic_dataset["manifest"]),
            "--min-ink-pixels",
            "0",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    table = json.loads((out / "cooc.json").read_text())
    assert table["overall_p_ink"] == 1.0  # fixture gives every image a mask row

    plan_out = tmp_path / "plan"
    code = main(
        [
            "plan",
            "--manifest",
            str(synthetic_dataset["manifest"]),
            "--ratio",
            "0.5",
            "--min-ink-pixels",
            "8",
            "--out",
            str(plan_out),
        ]
    )
    assert code == 0
    plan = json.loads((plan_out / "plan.json").read_text())
    assert plan["per_class_counts"]["alpha"] == {"inked": 5, "uninked": 2}


def test_ablate_and_invariance_commands(synthetic_dataset, tmp_path):
    # give the manifest images to ablate
    lines = synthetic_dataset["manifest"].read_text().splitlines()
    rng = np.random.default_rng(0)
    new_lines = [lines[0]]
    for line in lines[1:]:
        obj = json.loads(line)
        img_path = synthetic_dataset["dir"] / f"{obj['image_id']}_img.gst"
        save_tensor(Tensor(rng.random((8, 8, 3)).astype(np.float32)), img_path)
        obj["image"] = str(img_path)
        new_lines.append(json.dumps(obj))
    synthetic_dataset["manifest"].write_text("\n".join(new_lines) + "\n")

    out = tmp_path / "ablated"
    code = main(
        [
            "ablate",
            "--manifest",
            str(synthetic_dataset["manifest"]),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert (out / "manifest.jsonl").exists()
    assert len(list(out.glob("*_ablated.gst"))) == 20

    inv_out = tmp_path / "inv"
    code = main(
        [
            "invariance",
            "--original",
            str(synthetic_dataset["predictions"]),
            "--transformed",
            str(synthetic_dataset["predictions"]),
            "--out",
            str(inv_out),
        ]
    )
    assert code == 0
    inv = json.loads((inv_out / "invariance.json").read_text())
    assert inv["invariance_fraction"] == 1.0


def test_run_audit_library_surface(synthetic_dataset, tmp_path):
    config = AuditConfig(
        manifest=str(synthetic_dataset["manifest"]),
        predictions=str(synthetic_dataset["predictions"]),
        out=str(tmp_path / "out"),
        method="external",
        min_ink_pixels=0,
    )
    report = run_audit(config)
    assert report["n_images"] == 20
    assert report["excluded"] == {"empty_mask": 0, "below_min_pixels": 0}
