"""Segmentation and seed-quality metrics."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import UNLABELED
from .errors import EmptyCleanSet, ShapeMismatch


@dataclass
class IoUReport:
    intersection: np.ndarray
    union: np.ndarray
    iou: np.ndarray
    included: np.ndarray
    mean_iou: float
    pixel_accuracy: float
    correct: int = 0
    total: int = 0


@dataclass
class SeedQuality:
    precision: float
    coverage: float
    empty: bool
    clean: int
    labeled: int


def confusion_counts(pred, gt, num_classes):
    """Per-class intersection/union and pixel counts. GT pixels marked
    unlabeled are ignored."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if (pred.labels == UNLABELED).any():
        raise ValueError("prediction contains unlabeled pixels")
    valid = gt.labels != UNLABELED
    p = pred.labels[valid].astype(np.int64)
    g = gt.labels[valid].astype(np.int64)
    inter = np.bincount(p[p == g], minlength=num_classes)[:num_classes]
    area_p = np.bincount(p, minlength=num_classes)[:num_classes]
    area_g = np.bincount(g, minlength=num_classes)[:num_classes]
    return inter, area_p + area_g - inter, int((p == g).sum()), int(valid.sum())


def _report(inter, union, correct, total, mean_over, num_classes):
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    if mean_over == "present":
        included = union > 0
    elif mean_over == "all":
        included = np.ones(num_classes, bool)
    else:
        raise ValueError("mean_over must be 'present' or 'all'")
    miou = float(iou[included].mean()) if included.any() else 0.0
    acc = correct / total if total else 0.0
    return IoUReport(inter, union, iou, included, miou, acc, correct, total)


def iou(pred, gt, num_classes=None, mean_over="present"):
    """Per-class IoU; the mean runs over classes present in either map
    (``mean_over="all"`` averages over every class index instead)."""
    num_classes = num_classes or max(pred.num_classes, gt.num_classes)
    inter, union, correct, total = confusion_counts(pred, gt, num_classes)
    return _report(inter, union, correct, total, mean_over, num_classes)


def aggregate(reports, mean_over="present"):
    """Dataset-level IoU from summed per-image intersections and unions."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    n = max(len(r.intersection) for r in reports)

    def total(attr):
        out = np.zeros(n, dtype=np.int64)
        for r in reports:
            a = getattr(r, attr)
            out[: len(a)] += a
        return out

    return _report(total("intersection"), total("union"), sum(r.correct for r in reports),
                   sum(r.total for r in reports), mean_over, n)


def pixel_accuracy(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt.labels != UNLABELED
    return float((pred.labels[valid] == gt.labels[valid]).mean()) if valid.any() else 0.0


def seed_quality(clean, init, gt):
    """Precision of the selected clean labels and the fraction of labelled
    pixels they cover. An empty clean set reports precision -1."""
    mask = np.asarray(getattr(clean, "clean", clean), dtype=bool)
    if mask.shape != init.shape or init.shape != gt.shape:
        raise ShapeMismatch("clean mask, initial labels and ground truth must share a shape")
    labeled = int(init.labeled.sum())
    n_clean = int(mask.sum())
    coverage = n_clean / labeled if labeled else 0.0
    if n_clean == 0:
        warnings.warn("clean set is empty; precision undefined", EmptyCleanSet)
        return SeedQuality(-1.0, coverage, True, 0, labeled)
    correct = int((mask & (init.labels == gt.labels)).sum())
    return SeedQuality(correct / n_clean, coverage, False, n_clean, labeled)
