"""End-to-end audit pipeline: manifest + predictions + masks + saliency in,
bias report out. The CLI wraps this module; it is also usable as a library.

All reductions are performed in deterministic order (manifest order for
per-image rows, image_id-sorted order for population moments), so a report
is a pure function of (input files, config) regardless of worker count.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import __version__
from .aggregate import (
    MEAN,
    PEAK,
    ImageSaliencyStat,
    mean_artefact_saliency,
    peak_fraction,
    per_class_report,
    zscore_normalize,
)
from .core import (
    COMPETITIVE,
    EXTERNAL,
    GRADCAM,
    ArtefactMask,
    SaliencyMap,
    load_manifest,
    load_predictions,
    load_tensor,
)
from .errors import (
    EmptyInput,
    IncompatibleReports,
    MissingField,
    SalauditError,
)
from .metrics import kendall_tau, levene_test, rra_curve, wilcoxon_signed_rank
from .saliency import GradientBundle, compose_competitive, compose_gradcam

TARGET_PREDICTED = "predicted"
TARGET_TRUE = "true"


@dataclass(frozen=True)
class AuditConfig:
    manifest: str
    predictions: str
    out: str
    method: str = GRADCAM
    aggregation: str = MEAN
    percentile: float = 98.0
    ticks: int = 10
    min_ink_pixels: int = 100
    subset_classes: tuple[str, ...] = ()
    target_class: str = TARGET_PREDICTED
    split: str = "all"
    seed: int = 0
    jobs: int = 1
    levene_center: str = "mean"

    def __post_init__(self):
        if not 0.0 < self.percentile < 100.0:
            raise SalauditError(f"percentile {self.percentile} outside (0, 100)")
        if self.ticks < 2:
            raise SalauditError(f"ticks must be >= 2, got {self.ticks}")

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "predictions": self.predictions,
            "out": self.out,
            "method": self.method,
            "aggregation": self.aggregation,
            "percentile": self.percentile,
            "ticks": self.ticks,
            "min_ink_pixels": self.min_ink_pixels,
            "subset_classes": list(self.subset_classes),
            "target_class": self.target_class,
            "split": self.split,
            "seed": self.seed,
            "levene_center": self.levene_center,
        }


def report_schema() -> dict:
    text = (
        importlib.resources.files("salaudit")
        .joinpath("report_schema.json")
        .read_text()
    )
    return json.loads(text)


def _load_map(entry, method, target_idx, mask_shape) -> SaliencyMap:
    """Precomputed saliency tensor if the manifest lists one, else composed
    from the entry's gradient/activation tensors."""
    if method in entry.saliency:
        tensor = load_tensor(entry.saliency[method])
        values = tensor.values
        if values.ndim == 3 and values.shape[0] > target_idx:
            values = values[target_idx]
        return SaliencyMap(
            image_id=entry.image_id,
            method=method,
            target_class=target_idx,
            values=values,
        )
    if method == EXTERNAL:
        raise MissingField(
            f"image '{entry.image_id}': manifest lists no external saliency tensor"
        )
    if method == COMPETITIVE:
        if not entry.gradients:
            raise MissingField(
                f"image '{entry.image_id}': no gradient tensor to compose from"
            )
        bundle = GradientBundle(
            image_id=entry.image_id,
            per_class_grad_input=load_tensor(entry.gradients).values,
        )
        return compose_competitive(bundle, target_idx)
    if method == GRADCAM:
        if not entry.activations or not entry.layer_gradients:
            raise MissingField(
                f"image '{entry.image_id}': no activation/layer-gradient tensors "
                "to compose from"
            )
        bundle = GradientBundle(
            image_id=entry.image_id,
            layer_activations=load_tensor(entry.activations).values,
            layer_gradients=load_tensor(entry.layer_gradients).values,
        )
        return compose_gradcam(bundle, target_idx, mask_shape[0], mask_shape[1])
    raise SalauditError(f"unknown saliency method '{method}'")


@dataclass
class _ImageResult:
    image_id: str
    map: SaliencyMap | None = None
    stat: ImageSaliencyStat | None = None
    empty_mask: bool = False
    below_min: bool = False
    error: Exception | None = None


def _process_entry(entry, record, config) -> _ImageResult:
    result = _ImageResult(image_id=entry.image_id)
    try:
        if not entry.mask:
            raise MissingField(f"image '{entry.image_id}': manifest lists no mask")
        mask = ArtefactMask.from_tensor(entry.image_id, load_tensor(entry.mask))
        target_idx = (
            record.predicted_class
            if config.target_class == TARGET_PREDICTED
            else record.true_class
        )
        map_ = _load_map(entry, config.method, target_idx, mask.bits.shape)
        result.map = map_
        if mask.pixel_count == 0:
            result.empty_mask = True
        elif mask.pixel_count <= config.min_ink_pixels:
            result.below_min = True
        else:
            result.stat = ImageSaliencyStat(
                image_id=entry.image_id,
                mean_artefact=mean_artefact_saliency(map_, mask),
                peak_fraction=peak_fraction(map_, mask, config.percentile),
                artefact_pixels=mask.pixel_count,
                true_class=record.true_class,
                predicted_class=record.predicted_class,
                correct=record.correct,
            )
    except SalauditError as exc:
        exc.context.setdefault("image_id", entry.image_id)
        result.error = exc
    except OSError as exc:
        err = MissingField(f"image '{entry.image_id}': {exc}")
        err.context["image_id"] = entry.image_id
        result.error = err
    return result


def _test_or_error(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs).to_dict()
    except SalauditError as exc:
        return {"error": exc.code, "message": str(exc)}


def _curve_block(stats, config):
    curve = rra_curve(stats, n_ticks=config.ticks, aggregation=config.aggregation)
    tau = _test_or_error(
        kendall_tau,
        [p.threshold_percentile for p in curve.points],
        [p.accuracy for p in curve.points],
    )
    return curve, tau


def run_audit(config: AuditConfig) -> dict:
    """Compute the full audit report and write report.json, per_image.csv
    and rra_curve*.csv under config.out. Returns the report dict."""
    manifest = load_manifest(config.manifest)
    predictions = load_predictions(config.predictions)
    for name in config.subset_classes:
        if name not in manifest.classes:
            raise IncompatibleReports(f"subset class '{name}' not in manifest")

    entries = [
        e
        for e in manifest.entries
        if config.split == "all" or e.split == config.split
    ]
    if not entries:
        raise EmptyInput("no manifest entries match the requested split")
    for entry in entries:
        if entry.image_id not in predictions:
            raise MissingField(
                f"image '{entry.image_id}': no prediction record"
            )

    def work(entry):
        return _process_entry(entry, predictions[entry.image_id], config)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]

    for res in results:
        if res.error is not None:
            raise res.error

    raw_stats = [r.stat for r in results if r.stat is not None]
    if not raw_stats:
        raise EmptyInput("no images with artefact pixels above the threshold")
    excluded = {
        "empty_mask": sum(r.empty_mask for r in results),
        "below_min_pixels": sum(r.below_min for r in results),
    }

    normalization = None
    stats = raw_stats
    if config.aggregation == MEAN:
        maps = [r.map for r in results if r.map is not None]
        stats, mu, sigma = zscore_normalize(raw_stats, maps)
        normalization = (mu, sigma)

    report_obj = per_class_report(
        stats,
        manifest.classes,
        aggregation=config.aggregation,
        method=config.method,
        normalization=normalization,
    )

    curves = {}
    taus = {}
    curves["full"], taus["full"] = _curve_block(stats, config)
    if config.subset_classes:
        subset_idx = {manifest.classes.index(c) for c in config.subset_classes}
        subset = [s for s in stats if s.true_class in subset_idx]
        rest = [s for s in stats if s.true_class not in subset_idx]
        if subset:
            curves["subset"], taus["subset"] = _curve_block(subset, config)
        if rest:
            curves["rest"], taus["rest"] = _curve_block(rest, config)

    class_groups = {}
    for idx, name in enumerate(manifest.classes):
        vals = [s.value(config.aggregation) for s in stats if s.true_class == idx]
        if len(vals) >= 2:
            class_groups[name] = vals
    levene = (
        _test_or_error(
            levene_test, list(class_groups.values()), center=config.levene_center
        )
        if len(class_groups) >= 2
        else {"error": "too_few_groups", "message": "fewer than 2 classes with n >= 2"}
    )

    stat_by_id = {s.image_id: s for s in stats}
    raw_by_id = {s.image_id: s for s in raw_stats}
    per_image = [
        {
            "image_id": s.image_id,
            "true_class": manifest.classes[s.true_class],
            "predicted_class": manifest.classes[s.predicted_class],
            "correct": s.correct,
            "artefact_pixels": s.artefact_pixels,
            "mean_artefact": raw_by_id[s.image_id].mean_artefact,
            "peak_fraction": s.peak_fraction,
            "value": stat_by_id[s.image_id].value(config.aggregation),
        }
        for s in raw_stats
    ]

    report = {
        "version": __version__,
        "config": config.to_dict(),
        "classes": list(manifest.classes),
        "method": config.method,
        "aggregation": config.aggregation,
        "normalization": (
            {"mu": normalization[0], "sigma": normalization[1]}
            if normalization
            else None
        ),
        "excluded": excluded,
        "n_images": len(stats),
        "per_class": {
            name: {
                "mean": cs.mean,
                "ci_low": cs.ci_low,
                "ci_high": cs.ci_high,
                "n": cs.n,
            }
            for name, cs in report_obj.per_class.items()
        },
        "interclass_variance": report_obj.interclass_variance,
        "aurrac": {name: c.aurrac for name, c in curves.items()},
        "curves": {
            name: [
                {
                    "threshold_percentile": p.threshold_percentile,
                    "saliency_threshold": p.saliency_threshold,
                    "n_images": p.n_images,
                    "accuracy": p.accuracy,
                }
                for p in c.points
            ]
            for name, c in curves.items()
        },
        "tests": {
            "levene_across_classes": levene,
            **{f"kendall_{name}": tau for name, tau in taus.items()},
        },
        "per_image": per_image,
    }
    jsonschema.validate(report, report_schema())
    _write_outputs(report, curves, config)
    return report


def _write_outputs(report, curves, config):
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        report_path = out / "report.json"
        with open(report_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(report_path)

        csv_path = out / "per_image.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "image_id",
                    "true_class",
                    "predicted_class",
                    "correct",
                    "artefact_pixels",
                    "mean_artefact",
                    "peak_fraction",
                ]
            )
            for row in report["per_image"]:
                writer.writerow(
                    [
                        row["image_id"],
                        row["true_class"],
                        row["predicted_class"],
                        row["correct"],
                        row["artefact_pixels"],
                        repr(row["mean_artefact"]),
                        repr(row["peak_fraction"]),
                    ]
                )
        written.append(csv_path)

        for name, curve in curves.items():
            suffix = "" if name == "full" else f"_{name}"
            path = out / f"rra_curve{suffix}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["threshold_percentile", "n_images", "accuracy"])
                for p in curve.points:
                    writer.writerow(
                        [repr(p.threshold_percentile), p.n_images, repr(p.accuracy)]
                    )
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise


def compare_reports(report_a: dict, report_b: dict) -> dict:
    """Cross-model comparison of two audit reports: per-class deltas,
    inter-class variance pair, spread tests, and a paired signed-rank test
    over shared images."""
    if report_a["classes"] != report_b["classes"]:
        raise IncompatibleReports("reports audited different class lists")
    if report_a["aggregation"] != report_b["aggregation"]:
        raise IncompatibleReports("reports used different aggregation modes")

    deltas = {}
    for name in report_a["classes"]:
        in_a = name in report_a["per_class"]
        in_b = name in report_b["per_class"]
        if in_a and in_b:
            deltas[name] = (
                report_b["per_class"][name]["mean"]
                - report_a["per_class"][name]["mean"]
            )

    def class_groups(report):
        groups = {}
        for row in report["per_image"]:
            groups.setdefault(row["true_class"], []).append(row["value"])
        return {k: v for k, v in groups.items() if len(v) >= 2}

    def within_levene(report):
        groups = class_groups(report)
        if len(groups) < 2:
            return {
                "error": "too_few_groups",
                "message": "fewer than 2 classes with n >= 2",
            }
        return _test_or_error(levene_test, list(groups.values()))

    means_a = [report_a["per_class"][c]["mean"] for c in report_a["per_class"]]
    means_b = [report_b["per_class"][c]["mean"] for c in report_b["per_class"]]
    if len(means_a) >= 2 and len(means_b) >= 2:
        levene_interclass = _test_or_error(levene_test, [means_a, means_b])
    else:
        levene_interclass = {
            "error": "too_few_groups",
            "message": "need at least 2 classes per report",
        }

    vals_a = {row["image_id"]: row["value"] for row in report_a["per_image"]}
    vals_b = {row["image_id"]: row["value"] for row in report_b["per_image"]}
    shared = sorted(set(vals_a) & set(vals_b))
    if shared:
        a = [vals_a[i] for i in shared]
        b = [vals_b[i] for i in shared]
        if a == b:
            wilcoxon = {"identical": True, "n": len(shared)}
        else:
            wilcoxon = _test_or_error(wilcoxon_signed_rank, a, b)
    else:
        wilcoxon = {"error": "empty_input", "message": "image sets do not intersect"}

    return {
        "version": __version__,
        "classes": report_a["classes"],
        "aggregation": report_a["aggregation"],
        "per_class_delta": deltas,
        "interclass_variance": {
            "a": report_a["interclass_variance"],
            "b": report_b["interclass_variance"],
            "delta": report_b["interclass_variance"]
            - report_a["interclass_variance"],
        },
        "tests": {
            "levene_interclass_means": levene_interclass,
            "levene_within_a": within_levene(report_a),
            "levene_within_b": within_levene(report_b),
            "wilcoxon_paired_images": wilcoxon,
        },
        "n_shared_images": len(shared),
    }
