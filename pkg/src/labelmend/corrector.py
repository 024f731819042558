"""Per-image label correction and the end-to-end pipeline driver."""

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gat
from .camlab import ScoreMapSet, assign_labels, normalize_plane
from .detector import check_probability_map, detect_clean, pixel_loss
from .errors import DivergedLoss, EmptySeedSet, LabelmendError, ShapeMismatch
from .evalkit import iou, seed_quality
from .graphbuild import build_graph, handcrafted_features, pool_features
from .manifest import HANDCRAFTED
from .rng import image_seed
from .superpixel import slic
from .tensorio import LabelMap, read_image, read_label_map, read_tensor, write_color_overlay, write_label_map

log = logging.getLogger(__name__)

SEEDED, PREDICTED = "seeded", "gat-predicted"


@dataclass
class NodeLabelAssignment:
    """``labels[i]`` is the embedded class of superpixel i, or -1 if unseeded."""

    labels: np.ndarray
    margins: np.ndarray
    num_classes: int

    @property
    def seeded(self):
        return self.labels >= 0

    @property
    def count(self):
        return int(self.seeded.sum())


@dataclass
class CorrectionResult:
    corrected: LabelMap
    node_labels: np.ndarray
    source: np.ndarray
    probs: np.ndarray
    final_loss: float = math.nan
    trained: bool = False
    fell_back: bool = False
    losses: list = field(default_factory=list)
    model: gat.GatModel = None


def _vote_counts(labels, mask, partition, num_classes):
    node = partition.assignment[mask].astype(np.int64)
    lab = labels[mask].astype(np.int64)
    flat = np.bincount(node * num_classes + lab, minlength=partition.count * num_classes)
    return flat.reshape(partition.count, num_classes)


def embed_clean(clean, init_labels, partition):
    """Seed each superpixel with the most frequent label among its clean pixels."""
    mask = np.asarray(getattr(clean, "clean", clean), dtype=bool)
    if mask.shape != init_labels.shape or init_labels.shape != partition.assignment.shape:
        raise ShapeMismatch("clean mask, labels and partition must share a shape")
    mask = mask & init_labels.labeled
    C = init_labels.num_classes
    votes = _vote_counts(init_labels.labels, mask, partition, C)
    total = votes.sum(axis=1)
    winner = np.argmax(votes, axis=1)
    seeded = total > 0
    labels = np.where(seeded, winner, -1)
    margins = np.where(seeded, votes.max(axis=1) / np.maximum(total, 1), 0.0)
    return NodeLabelAssignment(labels, margins, C)


def superpixel_majority(labels, partition):
    """Most frequent label per superpixel (lowest index on ties, -1 if none)."""
    votes = _vote_counts(labels.labels, labels.labeled, partition, labels.num_classes)
    return np.where(votes.sum(axis=1) > 0, np.argmax(votes, axis=1), -1)


def project(node_labels, partition, num_classes):
    return LabelMap(np.asarray(node_labels)[partition.assignment], num_classes)


def correct_image(graph, seeds, partition, cfg, init_labels=None, trust_gat_everywhere=False):
    """Propagate seeded superpixel labels to the rest of the graph.

    ``cfg`` is a :class:`gat.TrainConfig`. Seeded superpixels keep their
    label unless ``trust_gat_everywhere`` is set.
    """
    labels = np.asarray(seeds.labels)
    seeded = labels >= 0
    if not seeded.any():
        raise EmptySeedSet("no superpixel overlaps a clean pixel")
    C = seeds.num_classes
    classes = np.unique(labels[seeded])

    if len(classes) == 1 or (seeded.all() and not trust_gat_everywhere):
        node = labels.copy() if seeded.all() else np.full(len(labels), classes[0])
        probs = np.eye(C)[node]
        source = np.where(seeded, SEEDED, PREDICTED)
        return CorrectionResult(project(node, partition, C), node, source, probs)

    model = gat.init_model(graph.dim, C, heads=cfg.heads, hidden=cfg.hidden,
                           att_dim=cfg.att_dim, seed=cfg.seed, init_scale=cfg.init_scale)
    try:
        fit = gat.train(model, graph, seeds, cfg)
    except DivergedLoss as exc:
        if init_labels is None:
            raise
        log.warning("GAT training diverged (%s); keeping initial labels for unseeded nodes", exc)
        fallback = superpixel_majority(init_labels, partition)
        node = np.where(seeded, labels, np.maximum(fallback, 0))
        source = np.where(seeded, SEEDED, PREDICTED)
        return CorrectionResult(project(node, partition, C), node, source, np.eye(C)[node],
                                fell_back=True, losses=exc.trace)
    probs = gat.forward(fit.model, graph)
    predicted = np.argmax(probs, axis=1)
    keep = seeded & (not trust_gat_everywhere)
    node = np.where(keep, labels, predicted)
    source = np.where(keep, SEEDED, PREDICTED)
    return CorrectionResult(project(node, partition, C), node, source, probs,
                            final_loss=fit.best_loss, trained=True, losses=fit.losses,
                            model=fit.model)


# ---------------------------------------------------------------- pipeline


def initial_labels(row, num_classes, cfg):
    if row.init is not None:
        return read_label_map(row.init, num_classes)
    planes = np.asarray(read_tensor(row.scores), dtype=np.float64)
    if planes.ndim != 3 or planes.shape[0] != num_classes - 1:
        raise ShapeMismatch(f"scores must be [{num_classes - 1}, H, W], got {planes.shape}")
    planes = planes.copy()
    for c in row.relevant:
        norm = normalize_plane(planes[c - 1])
        planes[c - 1] = 0.0 if norm is None else norm
    return assign_labels(ScoreMapSet(planes, row.relevant), cfg.bg_thresh, cfg.fg_thresh)


def process_image(row, cfg, outdir):
    """Run every stage for one manifest row; returns a summary dict."""
    out = {"image_id": row.image_id, "status": "ok", "message": ""}
    image = read_image(row.image)
    H, W = image.shape[:2]
    probs = check_probability_map(read_tensor(row.probs))
    if probs.shape[1:] != (H, W):
        raise ShapeMismatch(f"probabilities {probs.shape[1:]} vs image {(H, W)}")
    C = probs.shape[0]
    init = initial_labels(row, C, cfg)
    if init.shape != (H, W):
        raise ShapeMismatch(f"initial labels {init.shape} vs image {(H, W)}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clean = detect_clean(pixel_loss(probs, init), cfg.theta)
    partition = slic(image, min(cfg.superpixels, H * W), cfg.compactness, cfg.slic_iters)
    if row.features == HANDCRAFTED:
        V = handcrafted_features(image, partition)
    else:
        V = pool_features(read_tensor(row.features), partition, (H, W))
    graph = build_graph(V, partition, cfg.edge_symmetrize)
    seeds = embed_clean(clean, init, partition)
    train_cfg = cfg.train_config(seed=image_seed(cfg.seed, row.image_id))
    result = correct_image(graph, seeds, partition, train_cfg, init_labels=init,
                           trust_gat_everywhere=cfg.trust_gat_everywhere)

    write_label_map(result.corrected, os.path.join(outdir, f"{row.image_id}_corrected.pgm"))
    with open(os.path.join(outdir, f"{row.image_id}_overlay.ppm"), "wb") as fh:
        fh.write(write_color_overlay(result.corrected))
    if cfg.save_models and result.model is not None:
        gat.save_model(result.model, os.path.join(outdir, f"{row.image_id}_gat.lmw"))

    out.update(
        height=H, width=W, superpixels=partition.count, seeded=seeds.count,
        edges=int((graph.adjacency.nnz - graph.n) // 2), gamma=graph.gamma,
        clean_pixels=clean.count, labeled_pixels=int(init.labeled.sum()),
        trained=int(result.trained), fell_back=int(result.fell_back),
        gat_epochs=len(result.losses), gat_loss=result.final_loss,
    )
    if row.gt is not None:
        gt = read_label_map(row.gt, C)
        before = iou(_fill(init), gt, C, cfg.mean_over)
        after = iou(result.corrected, gt, C, cfg.mean_over)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sq = seed_quality(clean, init, gt)
        out.update(
            init_acc=before.pixel_accuracy, corrected_acc=after.pixel_accuracy,
            init_miou=before.mean_iou, corrected_miou=after.mean_iou,
            seed_precision=sq.precision, seed_coverage=sq.coverage,
        )
    return out


def _fill(labels):
    # unlabeled pixels count as background when scoring initial maps
    return LabelMap(np.where(labels.labeled, labels.labels, 0), labels.num_classes)


def _safe_process(args):
    row, cfg, outdir = args
    try:
        return process_image(row, cfg, outdir)
    except (LabelmendError, OSError, ValueError) as exc:
        log.error("%s: %s", row.image_id, exc)
        return {"image_id": row.image_id, "status": "failed", "message": str(exc)}


def run_pipeline(rows, cfg, outdir):
    """Process every manifest row; failures are recorded, not raised.
    Returns summary dicts sorted by image id."""
    os.makedirs(outdir, exist_ok=True)
    rows = sorted(rows, key=lambda r: r.image_id)
    jobs = [(r, cfg, outdir) for r in rows]
    workers = min(cfg.worker_count, max(len(jobs), 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_process, jobs))
    else:
        results = [_safe_process(j) for j in jobs]
    for r in results:
        log.info("%s: %s", r["image_id"], r["status"])
    return sorted(results, key=lambda r: r["image_id"])
