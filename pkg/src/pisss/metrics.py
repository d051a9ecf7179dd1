"""Confusion-matrix evaluation: per-class IoU, mIoU, smoothed scores, bias tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .dataset import ClassTaxonomy, DatasetStats
from .errors import ConfigError


class ConfusionMatrix:
    """CxC pixel-count accumulator; rows = ground truth, cols = prediction."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, predicted: np.ndarray, true: np.ndarray) -> "ConfusionMatrix":
        if predicted.shape != true.shape:
            raise ConfigError(f"prediction {predicted.shape} and truth {true.shape} "
                              f"shapes differ")
        p = predicted.ravel().astype(np.int64)
        t = true.ravel().astype(np.int64)
        C = self.num_classes
        if p.size and (p.min() < 0 or p.max() >= C or t.min() < 0 or t.max() >= C):
            raise ConfigError("class id out of range for confusion matrix")
        binned = np.bincount(t * C + p, minlength=C * C)
        self.counts += binned.reshape(C, C)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ConfigError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricReport:
    """Per-class IoU (nan for classes absent from both maps), mIoU, pixel acc."""

    iou_per_class: np.ndarray
    miou: float
    pixel_accuracy: float

    def present_classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(~np.isnan(self.iou_per_class))]

    def write_csv(self, fp, taxonomy: ClassTaxonomy | None = None) -> None:
        writer = csv.writer(fp)
        writer.writerow(["class_id", "name", "iou"])
        for c, iou in enumerate(self.iou_per_class):
            name = taxonomy.classes[c].name if taxonomy else f"class_{c}"
            writer.writerow([c, name, "" if np.isnan(iou) else repr(float(iou))])
        writer.writerow(["mean", "mIoU", repr(float(self.miou))])
        writer.writerow(["", "pixel_accuracy", repr(float(self.pixel_accuracy))])


def miou(confusion: ConfusionMatrix, ignore_classes: tuple[int, ...] = ()) -> MetricReport:
    """IoU_c = diag / (row + col - diag); zero-union classes are excluded."""
    counts = confusion.counts.astype(np.float64)
    diag = np.diag(counts)
    union = counts.sum(axis=1) + counts.sum(axis=0) - diag
    iou = np.full(confusion.num_classes, np.nan)
    present = union > 0
    iou[present] = diag[present] / union[present]
    consider = present.copy()
    for c in ignore_classes:
        consider[c] = False
    mean = float(iou[consider].mean()) if consider.any() else float("nan")
    total = counts.sum()
    acc = float(diag.sum() / total) if total > 0 else float("nan")
    return MetricReport(iou, mean, acc)


def smoothed_validation_score(history, k: int = 10) -> float:
    """Mean of the last min(k, len) validation mIoU values.

    History entries are (iteration, miou) pairs.
    """
    if not history:
        raise ConfigError("history must contain at least one entry")
    if k < 1:
        raise ConfigError("k must be >= 1")
    tail = history[-k:]
    return float(np.mean([m for _, m in tail]))


def _spearman(x, y) -> float:
    """Spearman rank correlation; 0.0 by convention for constant inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    rho = sps.spearmanr(x, y).statistic
    return float(rho) if np.isfinite(rho) else 0.0


@dataclass
class BiasReport:
    """Per-class join of IoU with size/frequency stats plus rank correlations."""

    rows: list[dict]
    iou_vs_median_edge: float
    iou_vs_inverse_frequency: float

    def write_csv(self, fp) -> None:
        writer = csv.writer(fp)
        writer.writerow(["class_id", "name", "iou", "median_min_edge",
                         "inverse_frequency"])
        for row in self.rows:
            writer.writerow([row["class_id"], row["name"], repr(row["iou"]),
                             repr(row["median_min_edge"]),
                             repr(row["inverse_frequency"])])
        writer.writerow(["corr", "iou_vs_median_edge", repr(self.iou_vs_median_edge),
                         "", ""])
        writer.writerow(["corr", "iou_vs_inverse_frequency",
                         repr(self.iou_vs_inverse_frequency), "", ""])


def bias_analysis(report: MetricReport, stats: DatasetStats,
                  taxonomy: ClassTaxonomy) -> BiasReport:
    """Relate per-class IoU to blob size and inverse class frequency."""
    rows = []
    for c in report.present_classes():
        edge = stats.median_min_edge(c)
        inv = float(stats.inverse_frequency[c])
        if not np.isfinite(edge) or not np.isfinite(inv):
            continue
        rows.append({
            "class_id": c,
            "name": taxonomy.classes[c].name,
            "iou": float(report.iou_per_class[c]),
            "median_min_edge": edge,
            "inverse_frequency": inv,
        })
    ious = [r["iou"] for r in rows]
    return BiasReport(
        rows,
        _spearman(ious, [r["median_min_edge"] for r in rows]),
        _spearman(ious, [r["inverse_frequency"] for r in rows]),
    )


def write_history_tsv(fp, history) -> None:
    """Line-oriented ``iteration<TAB>miou`` log."""
    for it, m in history:
        fp.write(f"{it}\t{repr(float(m))}\n")
