"""Class activation maps and the initial (noisy) pixel labelling derived from them."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import UNLABELED
from .errors import DegeneratePlane, EmptyRelevantSet, ShapeMismatch
from .tensorio import LabelMap

DEFAULT_BG_THRESH = 0.05


@dataclass(frozen=True)
class ScoreMapSet:
    """Normalised activation planes, one per foreground class.

    ``planes[c - 1]`` belongs to class ``c`` (class 0 is background and has
    no plane). Planes of classes outside ``relevant`` are all zero.
    """

    planes: np.ndarray
    relevant: frozenset

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3:
            raise ShapeMismatch(f"score planes must be [C-1, H, W], got {planes.shape}")
        relevant = frozenset(int(c) for c in self.relevant)
        if not relevant:
            raise EmptyRelevantSet("at least one relevant class is required")
        if min(relevant) < 1 or max(relevant) > planes.shape[0]:
            raise ShapeMismatch(f"relevant classes {sorted(relevant)} outside 1..{planes.shape[0]}")
        planes = planes.copy()
        for c in range(1, planes.shape[0] + 1):
            if c not in relevant:
                planes[c - 1] = 0.0
        planes.setflags(write=False)
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "relevant", relevant)

    @property
    def num_classes(self):
        return self.planes.shape[0] + 1


def normalize_plane(raw):
    """Clamp at zero, then min-max rescale to [0, 1]. Returns None if flat."""
    plane = np.maximum(raw, 0.0)
    lo, hi = plane.min(), plane.max()
    if hi <= lo:
        return None
    return (plane - lo) / (hi - lo)


def raw_cam(features, weights):
    """Unnormalised activation maps: ``sum_k w[c, k] * f[k]`` for every class row."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 3 or weights.ndim != 2:
        raise ShapeMismatch("features must be [K, H, W] and weights [C-1, K]")
    if weights.shape[1] != features.shape[0]:
        raise ShapeMismatch(
            f"weights have {weights.shape[1]} columns, features have {features.shape[0]} channels"
        )
    return np.tensordot(weights, features, axes=(1, 0))


def compute_cam(features, weights, relevant):
    relevant = frozenset(int(c) for c in relevant)
    if not relevant:
        raise EmptyRelevantSet("at least one relevant class is required")
    raw = raw_cam(features, weights)
    planes = np.zeros_like(raw)
    for c in sorted(relevant):
        if not 1 <= c <= raw.shape[0]:
            raise ShapeMismatch(f"relevant class {c} has no weight row")
        norm = normalize_plane(raw[c - 1])
        if norm is None:
            warnings.warn(f"class {c} activation plane is constant; zeroed", DegeneratePlane)
            continue
        planes[c - 1] = norm
    return ScoreMapSet(planes, relevant)


def assign_labels(scores, background_threshold=DEFAULT_BG_THRESH, fg_threshold=None):
    """Label each pixel with its highest-scoring relevant class.

    Pixels whose best score is below ``background_threshold`` become
    background. ``fg_threshold`` (evaluation-only) leaves pixels scoring in
    ``[background_threshold, fg_threshold)`` unlabeled.
    """
    if not 0.0 < background_threshold < 1.0:
        raise ValueError("background_threshold must lie in (0, 1)")
    classes = np.array(sorted(scores.relevant))
    stack = scores.planes[classes - 1]
    # argmax returns the first maximum, i.e. the lowest class index on ties
    best = np.argmax(stack, axis=0)
    top = np.take_along_axis(stack, best[None], axis=0)[0]
    labels = np.where(top < background_threshold, 0, classes[best])
    if fg_threshold is not None:
        labels = np.where((top >= background_threshold) & (top < fg_threshold), UNLABELED, labels)
    return LabelMap(labels, scores.num_classes)
