"""Rotation-sweep evaluation: per-angle accuracy over 12 equally spaced
angles, confusion matrices, summary statistics, and CSV/JSON reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import rotate
from .models import Model, predict

ANGLES_DEG = tuple(range(0, 360, 30))


@dataclass
class AngleSweepReport:
    model_name: str
    n_test: int
    angles_deg: tuple[int, ...]
    accuracies: list[float]  # fractions in [0, 1], one per angle
    confusions: list[np.ndarray] = field(repr=False)  # C x C counts, rows = true class
    mean_pct: float = 0.0
    std_pct: float = 0.0


def summarize(values) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation (divisor n).

    Accepts a sequence of per-angle values or an AngleSweepReport (whose
    accuracies are summarized in percent).
    """
    if isinstance(values, AngleSweepReport):
        values = [a * 100.0 for a in values.accuracies]
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def angle_sweep(model: Model, test, predict_fn=None) -> AngleSweepReport:
    """Evaluate a frozen model on every test image rotated to each angle.

    Multiples of 90 degrees use the exact index-permutation rotation; the
    other angles use bilinear interpolation with zero fill. Test images
    receive no augmentation. ``predict_fn(img) -> class_id`` may replace
    the model's own prediction (e.g. for oracle baselines in tests).
    """
    if not test:
        raise ValueError("empty test set")
    if predict_fn is None:
        model.eval()
        predict_fn = lambda img: predict(model, img)[0]
    n_classes = model.num_classes
    accuracies = []
    confusions = []
    for angle in ANGLES_DEG:
        phi = np.deg2rad(angle)
        confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
        for item in test:
            pred = predict_fn(rotate(item.image, phi))
            confusion[item.label, pred] += 1
        confusions.append(confusion)
        accuracies.append(float(np.trace(confusion)) / len(test))
    report = AngleSweepReport(model_name=model.name, n_test=len(test), angles_deg=ANGLES_DEG,
                              accuracies=accuracies, confusions=confusions)
    report.mean_pct, report.std_pct = summarize(report)
    return report


def emit_report(report: AngleSweepReport, path, fmt: str = "csv") -> Path:
    """Write a sweep report; CSV holds the per-angle table, JSON the full
    report including confusion matrices. Field order is deterministic."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["angle_deg", "accuracy_pct", "n_correct", "n_total"])
            for angle, acc, confusion in zip(report.angles_deg, report.accuracies, report.confusions):
                writer.writerow([angle, f"{acc * 100.0:.1f}", int(np.trace(confusion)), report.n_test])
    elif fmt == "json":
        payload = {
            "model": report.model_name,
            "n_test": report.n_test,
            "angles_deg": list(report.angles_deg),
            "accuracies": report.accuracies,
            "confusions": [c.tolist() for c in report.confusions],
            "mean_pct": report.mean_pct,
            "std_pct": report.std_pct,
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report(path) -> AngleSweepReport:
    """Read back a JSON sweep report."""
    with open(path) as f:
        payload = json.load(f)
    return AngleSweepReport(
        model_name=payload["model"],
        n_test=payload["n_test"],
        angles_deg=tuple(payload["angles_deg"]),
        accuracies=payload["accuracies"],
        confusions=[np.asarray(c, dtype=np.int64) for c in payload["confusions"]],
        mean_pct=payload["mean_pct"],
        std_pct=payload["std_pct"],
    )


def format_comparison(reports: list[AngleSweepReport]) -> str:
    """Plain-text per-angle table; with two reports a delta column is added
    (first minus second)."""
    header = ["Angle"] + [r.model_name for r in reports]
    delta = len(reports) == 2
    if delta:
        header.append("delta")
    lines = ["\t".join(header)]
    for i, angle in enumerate(reports[0].angles_deg):
        row = [f"{angle}"] + [f"{r.accuracies[i] * 100.0:.1f}" for r in reports]
        if delta:
            row.append(f"{(reports[0].accuracies[i] - reports[1].accuracies[i]) * 100.0:+.1f}")
        lines.append("\t".join(row))
    means = ["Mean"] + [f"{r.mean_pct:.1f}" for r in reports]
    stds = ["Std"] + [f"{r.std_pct:.1f}" for r in reports]
    if delta:
        means.append(f"{reports[0].mean_pct - reports[1].mean_pct:+.1f}")
        stds.append("")
    lines.append("\t".join(means))
    lines.append("\t".join(stds))
    return "\n".join(lines)
