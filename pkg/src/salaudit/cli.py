"""Command-line surface. Subcommands: audit, compare, cooc, plan, ablate,
invariance. Errors are emitted as structured JSON on stderr."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audit import AuditConfig, compare_reports, run_audit
from .core import (
    ArtefactMask,
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    load_predictions,
    load_tensor,
    save_manifest,
    save_tensor,
)
from .datasetops import (
    ablate,
    cooccurrence,
    ink_only_filter,
    prediction_invariance,
    unbiased_plan,
)
from .errors import MissingField, SalauditError


def _load_masks(manifest: DatasetManifest) -> dict[str, ArtefactMask]:
    masks = {}
    for entry in manifest.entries:
        if not entry.mask:
            raise MissingField(f"image '{entry.image_id}': manifest lists no mask")
        masks[entry.image_id] = ArtefactMask.from_tensor(
            entry.image_id, load_tensor(entry.mask)
        )
    return masks


def _write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_audit(args) -> int:
    config = AuditConfig(
        manifest=args.manifest,
        predictions=args.predictions,
        out=args.out,
        method=args.method,
        aggregation=args.aggregation,
        percentile=args.percentile,
        ticks=args.ticks,
        min_ink_pixels=args.min_ink_pixels,
        subset_classes=tuple(
            c for c in (args.subset_classes or "").split(",") if c
        ),
        target_class=args.target_class,
        split=args.split,
        seed=args.seed,
        jobs=args.jobs,
        levene_center=args.levene_center,
    )
    run_audit(config)
    print(f"report written to {Path(args.out) / 'report.json'}")
    return 0


def cmd_compare(args) -> int:
    report_a = json.loads(Path(args.report_a).read_text())
    report_b = json.loads(Path(args.report_b).read_text())
    comparison = compare_reports(report_a, report_b)
    if args.out:
        _write_json(comparison, Path(args.out) / "compare.json")
        print(f"comparison written to {Path(args.out) / 'compare.json'}")
    else:
        json.dump(comparison, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def cmd_cooc(args) -> int:
    manifest = load_manifest(args.manifest)
    masks = _load_masks(manifest)
    table = cooccurrence(manifest, masks, min_pixels=args.min_ink_pixels)
    obj = {
        "min_ink_pixels": args.min_ink_pixels,
        "overall_p_ink": table.overall_p_ink,
        "per_class": {
            name: {
                "inked": cc.inked,
                "uninked": cc.uninked,
                "p_ink_given_class": cc.p_ink_given_class,
            }
            for name, cc in table.per_class.items()
        },
    }
    out = Path(args.out)
    _write_json(obj, out / "cooc.json")
    with open(out / "cooc.csv", "w") as fh:
        fh.write("class,inked,uninked,p_ink_given_class\n")
        for name, cc in table.per_class.items():
            fh.write(f"{name},{cc.inked},{cc.uninked},{repr(cc.p_ink_given_class)}\n")
    print(f"co-occurrence table written to {out / 'cooc.json'}")
    return 0


def cmd_plan(args) -> int:
    manifest = load_manifest(args.manifest)
    masks = _load_masks(manifest)
    plan = unbiased_plan(
        manifest,
        masks,
        ratio=args.ratio,
        seed=args.seed,
        min_pixels=args.min_ink_pixels,
    )
    obj = {
        "seed": plan.seed,
        "ratio": args.ratio,
        "selected_ids": list(plan.selected_ids),
        "per_class_counts": {
            name: {"inked": cc.inked, "uninked": cc.uninked}
            for name, cc in plan.per_class_counts.items()
        },
    }
    _write_json(obj, Path(args.out) / "plan.json")
    print(f"sampling plan written to {Path(args.out) / 'plan.json'}")
    return 0


def cmd_ablate(args) -> int:
    manifest = load_manifest(args.manifest)
    masks = _load_masks(manifest)
    if args.ink_only:
        manifest = ink_only_filter(manifest, masks, min_pixels=args.min_ink_pixels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    new_entries = []
    for entry in manifest.entries:
        if not entry.image:
            raise MissingField(f"image '{entry.image_id}': manifest lists no image")
        ablated = ablate(load_tensor(entry.image), masks[entry.image_id])
        path = out / f"{entry.image_id}_ablated.gst"
        save_tensor(ablated, path)
        new_entries.append(
            ManifestEntry(
                image_id=entry.image_id,
                label=entry.label,
                class_index=entry.class_index,
                image=str(path),
                mask=entry.mask,
                saliency=entry.saliency,
                gradients=entry.gradients,
                activations=entry.activations,
                layer_gradients=entry.layer_gradients,
                split=entry.split,
            )
        )
    save_manifest(
        DatasetManifest(classes=manifest.classes, entries=tuple(new_entries)),
        out / "manifest.jsonl",
    )
    print(f"{len(new_entries)} ablated images written under {out}")
    return 0


def cmd_invariance(args) -> int:
    original = load_predictions(args.original)
    transformed = load_predictions(args.transformed)
    report = prediction_invariance(original, transformed)
    obj = {
        "n_pairs": report.n_pairs,
        "invariant": report.invariant,
        "invariance_fraction": report.invariance_fraction,
        "change_counts": {
            str(orig): {str(new): count for new, count in row.items()}
            for orig, row in report.change_counts.items()
        },
    }
    _write_json(obj, Path(args.out) / "invariance.json")
    print(f"invariance report written to {Path(args.out) / 'invariance.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salaudit",
        description="Quantify artefact-induced classifier bias from saliency maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="run the full saliency audit")
    audit.add_argument("--manifest", required=True)
    audit.add_argument("--predictions", required=True)
    audit.add_argument(
        "--method", choices=["gradcam", "competitive", "external"], default="gradcam"
    )
    audit.add_argument("--aggregation", choices=["mean", "peak"], default="mean")
    audit.add_argument("--percentile", type=float, default=98.0)
    audit.add_argument("--ticks", type=int, default=10)
    audit.add_argument("--min-ink-pixels", type=int, default=100)
    audit.add_argument(
        "--subset-classes",
        default="",
        help="comma-separated class names for subset/rest curve splits",
    )
    audit.add_argument(
        "--target-class", choices=["predicted", "true"], default="predicted"
    )
    audit.add_argument("--split", choices=["train", "val", "all"], default="all")
    audit.add_argument("--seed", type=int, default=0)
    audit.add_argument("--jobs", type=int, default=1)
    audit.add_argument("--levene-center", choices=["mean", "median"], default="mean")
    audit.add_argument("--out", required=True)
    audit.set_defaults(func=cmd_audit)

    compare = sub.add_parser("compare", help="compare two audit reports")
    compare.add_argument("report_a")
    compare.add_argument("report_b")
    compare.add_argument("--out", default=None)
    compare.set_defaults(func=cmd_compare)

    cooc = sub.add_parser("cooc", help="artefact co-occurrence table")
    cooc.add_argument("--manifest", required=True)
    cooc.add_argument("--min-ink-pixels", type=int, default=100)
    cooc.add_argument("--out", required=True)
    cooc.set_defaults(func=cmd_cooc)

    plan = sub.add_parser("plan", help="unbiased sampling plan")
    plan.add_argument("--manifest", required=True)
    plan.add_argument("--ratio", type=float, default=0.5)
    plan.add_argument("--seed", type=int, default=0)
    plan.add_argument("--min-ink-pixels", type=int, default=100)
    plan.add_argument("--out", required=True)
    plan.set_defaults(func=cmd_plan)

    ablate_p = sub.add_parser("ablate", help="replace non-artefact pixels by the mean pixel")
    ablate_p.add_argument("--manifest", required=True)
    ablate_p.add_argument("--ink-only", action="store_true")
    ablate_p.add_argument("--min-ink-pixels", type=int, default=100)
    ablate_p.add_argument("--out", required=True)
    ablate_p.set_defaults(func=cmd_ablate)

    inv = sub.add_parser(
        "invariance", help="prediction invariance between two prediction files"
    )
    inv.add_argument("--original", required=True)
    inv.add_argument("--transformed", required=True)
    inv.add_argument("--out", required=True)
    inv.set_defaults(func=cmd_invariance)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SalauditError as exc:
        json.dump(
            {"code": exc.code, "message": str(exc), **exc.context},
            sys.stderr,
            sort_keys=True,
        )
        sys.stderr.write("\n")
        return 1
    except OSError as exc:
        json.dump({"code": "io_error", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
