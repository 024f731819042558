"""Small-loss detection of clean labels under a trusted model's probabilities."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import UNLABELED
from .errors import (
    EmptyCandidateGrid,
    EmptyCleanSet,
    MissingGroundTruth,
    NonPositiveTheta,
    ShapeMismatch,
    UnmetPrecision,
)
from .tensorio import LabelMap

LOSS_INF = np.float32(3.4e38)
DEFAULT_THETA = 0.001
DEFAULT_TARGET_PRECISION = 0.97


def default_theta_grid():
    return np.logspace(-5, -1, 40)


def check_probability_map(probs, tol=1e-4):
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ShapeMismatch(f"probability map must be [C, H, W], got {probs.shape}")
    if (probs < 0).any() or (probs > 1).any():
        raise ValueError("probabilities must lie in [0, 1]")
    if np.abs(probs.sum(axis=0, dtype=np.float64) - 1.0).max() > tol:
        raise ValueError("per-pixel probabilities must sum to 1")
    return probs


@dataclass(frozen=True)
class CleanMask:
    clean: np.ndarray
    theta: float

    @property
    def count(self):
        return int(self.clean.sum())


@dataclass
class ThetaReport:
    candidates: np.ndarray
    precision: np.ndarray
    selected_fraction: np.ndarray
    selected: np.ndarray
    theta: float
    target_precision: float
    unmet_precision: bool = False
    labeled: int = 0


def pixel_loss(probs, init_labels):
    """Cross-entropy of each initial label under ``probs``; ``LOSS_INF`` where unlabeled."""
    probs = np.asarray(probs)
    if probs.ndim != 3 or probs.shape[1:] != init_labels.shape:
        raise ShapeMismatch(f"probs {probs.shape} vs labels {init_labels.shape}")
    if probs.shape[0] < init_labels.num_classes:
        raise ShapeMismatch(
            f"probs have {probs.shape[0]} classes, labels use {init_labels.num_classes}"
        )
    labeled = init_labels.labeled
    idx = np.where(labeled, init_labels.labels, 0).astype(np.intp)
    p = np.take_along_axis(probs.astype(np.float64), idx[None], axis=0)[0]
    with np.errstate(divide="ignore"):
        loss = -np.log(p)
    loss = np.minimum(loss, float(LOSS_INF))
    loss[~labeled] = float(LOSS_INF)
    return loss.astype(np.float32)


def detect_clean(losses, theta):
    if not theta > 0:
        raise NonPositiveTheta(f"theta must be positive, got {theta}")
    losses = np.asarray(losses, dtype=np.float64)
    clean = (losses <= float(theta)) & (losses < float(LOSS_INF))
    if not clean.any():
        warnings.warn(f"no pixel has loss <= {theta:g}", EmptyCleanSet)
    clean.setflags(write=False)
    return CleanMask(clean, float(theta))


def select_theta(losses, init_labels, gt_labels, target_precision=DEFAULT_TARGET_PRECISION,
                 candidates=None):
    """Pick the largest threshold whose selected labels reach ``target_precision``.

    ``losses``, ``init_labels`` and ``gt_labels`` are parallel sequences, one
    entry per image, already ordered by image id. A threshold that selects
    nothing has vacuous precision 1.
    """
    candidates = default_theta_grid() if candidates is None else np.asarray(candidates, float)
    if candidates.size == 0:
        raise EmptyCandidateGrid("no candidate thresholds")
    if np.any(np.diff(candidates) < 0):
        raise ValueError("candidate thresholds must be sorted ascending")
    if not 0.5 < target_precision < 1.0:
        raise ValueError("target_precision must lie in (0.5, 1)")
    if len(gt_labels) != len(losses) or any(g is None for g in gt_labels):
        raise MissingGroundTruth("every calibration image needs a ground-truth map")

    # Pool (loss, correct) over labelled pixels; integer counts keep the
    # reduction order-independent.
    pooled_loss, pooled_ok = [], []
    for loss, init, gt in zip(losses, init_labels, gt_labels):
        if init.shape != gt.shape or np.shape(loss) != init.shape:
            raise ShapeMismatch("losses, initial labels and ground truth must share a shape")
        lab = init.labeled
        pooled_loss.append(np.asarray(loss, np.float64)[lab])
        pooled_ok.append((init.labels == gt.labels)[lab])
    loss = np.concatenate(pooled_loss) if pooled_loss else np.zeros(0)
    ok = np.concatenate(pooled_ok) if pooled_ok else np.zeros(0, bool)
    order = np.argsort(loss, kind="stable")
    loss_sorted = loss[order]
    ok_cum = np.concatenate([[0], np.cumsum(ok[order], dtype=np.int64)])

    n_sel = np.searchsorted(loss_sorted, candidates, side="right")
    n_ok = ok_cum[n_sel]
    precision = np.where(n_sel > 0, n_ok / np.maximum(n_sel, 1), 1.0)
    fraction = n_sel / max(loss.size, 1)

    qualifies = np.flatnonzero(precision >= target_precision)
    unmet = qualifies.size == 0
    chosen = candidates[0] if unmet else candidates[qualifies[-1]]
    if unmet:
        warnings.warn(
            f"no candidate reaches precision {target_precision}; using {chosen:g}", UnmetPrecision
        )
    return ThetaReport(
        candidates=candidates,
        precision=precision,
        selected_fraction=fraction,
        selected=n_sel,
        theta=float(chosen),
        target_precision=float(target_precision),
        unmet_precision=unmet,
        labeled=int(loss.size),
    )


def clean_label_map(clean, init_labels):
    """Initial labels with every non-clean pixel turned unlabeled."""
    return LabelMap(np.where(clean.clean, init_labels.labels, UNLABELED), init_labels.num_classes)
