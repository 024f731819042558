"""SLIC over-segmentation with connectivity enforcement."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyImage, TargetTooLarge

DEFAULT_COUNT = 1000
DEFAULT_COMPACTNESS = 10.0
DEFAULT_ITERS = 10

# sRGB (D65) -> XYZ
_RGB2XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class SuperpixelPartition:
    """``assignment[y, x]`` is a superpixel id in ``[0, count)``.

    ``centers[i]`` holds the mean (L, a, b, x, y) of superpixel ``i``.
    """

    assignment: np.ndarray
    count: int
    centers: np.ndarray

    @property
    def sizes(self):
        return np.bincount(self.assignment.ravel(), minlength=self.count)


def rgb_to_lab(image):
    """sRGB in [0, 1], shape ``[H, W, 3]`` -> CIELAB ``[3, H, W]`` (D65)."""
    rgb = np.asarray(image, dtype=np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b])


def grid_shape(height, width, target):
    """Rows x cols of the seeding grid: closest product to ``target``, then
    closest to square cells, then more columns."""
    best = None
    for ny in range(1, min(height, target) + 1):
        nx = min(width, max(1, round(target / ny)))
        aspect = abs(math.log((height / ny) / (width / nx)))
        key = (abs(ny * nx - target), round(aspect, 9), -nx)
        if best is None or key < best[0]:
            best = (key, ny, nx)
    return best[1], best[2]


def _gradient(lab):
    p = np.pad(lab, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = p[:, 1:-1, 2:] - p[:, 1:-1, :-2]
    gy = p[:, 2:, 1:-1] - p[:, :-2, 1:-1]
    return (gx ** 2).sum(0) + (gy ** 2).sum(0)


def _seed_centers(lab, ny, nx):
    _, H, W = lab.shape
    hy, hx = H / ny, W / nx
    ys = (np.arange(ny) + 0.5) * hy - 0.5
    xs = (np.arange(nx) + 0.5) * hx - 0.5
    fy, fx = [a.ravel() for a in np.meshgrid(ys, xs, indexing="ij")]
    cy, cx = np.round(fy).astype(int), np.round(fx).astype(int)
    if hy >= 3 and hx >= 3:
        # move each seed to the lowest-gradient pixel of its 3x3 neighbourhood
        grad = np.pad(_gradient(lab), 1, constant_values=np.inf)
        offsets = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
        cand = np.stack([grad[cy + 1 + dy, cx + 1 + dx] for dy, dx in offsets])
        here = cand[4]
        pick = np.argmin(cand, axis=0)
        keep = here <= cand.min(axis=0)
        dy = np.array([o[0] for o in offsets])[pick]
        dx = np.array([o[1] for o in offsets])[pick]
        fy = np.where(keep, fy, cy + dy)
        fx = np.where(keep, fx, cx + dx)
        cy, cx = np.where(keep, cy, cy + dy), np.where(keep, cx, cx + dx)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    init = (np.minimum((yy / hy).astype(int), ny - 1) * nx
            + np.minimum((xx / hx).astype(int), nx - 1))
    centers = np.column_stack([lab[:, cy, cx].T, fy, fx]).astype(np.float64)
    return centers, init


def _assign(lab, centers, labels, step, compactness):
    _, H, W = lab.shape
    r = int(math.ceil(step)) + 1
    off = np.arange(-r, r + 1)
    oy, ox = [a.ravel() for a in np.meshgrid(off, off, indexing="ij")]
    ry = np.round(centers[:, 3]).astype(int)[:, None] + oy[None]
    rx = np.round(centers[:, 4]).astype(int)[:, None] + ox[None]
    dy = ry - centers[:, 3:4]
    dx = rx - centers[:, 4:5]
    ok = (ry >= 0) & (ry < H) & (rx >= 0) & (rx < W) & (np.abs(dy) <= step) & (np.abs(dx) <= step)
    k = np.broadcast_to(np.arange(len(centers))[:, None], ok.shape)[ok]
    py, px, dy, dx = ry[ok], rx[ok], dy[ok], dx[ok]
    pix = py * W + px
    d_lab = ((lab[:, py, px] - centers[k, :3].T) ** 2).sum(0)
    dist = d_lab + (compactness / step) ** 2 * (dy ** 2 + dx ** 2)
    # per pixel: smallest distance, ties to the lowest center index
    best = np.full(H * W, np.inf)
    np.minimum.at(best, pix, dist)
    win = dist == best[pix]
    bestk = np.full(H * W, len(centers))
    np.minimum.at(bestk, pix[win], k[win])
    out = labels.ravel().copy()
    covered = bestk < len(centers)
    out[covered] = bestk[covered]
    return out.reshape(H, W)


def _update_centers(lab, labels, centers):
    _, H, W = lab.shape
    flat = labels.ravel()
    n = len(centers)
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    planes = [lab[0], lab[1], lab[2], yy, xx]
    sums = np.stack([np.bincount(flat, weights=p.ravel(), minlength=n) for p in planes], 1)
    new = centers.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live, None]
    return new


def label_components(labels):
    """4-connected components of equal-valued pixels. Returns (count, comp map)."""
    H, W = labels.shape
    idx = np.arange(H * W).reshape(H, W)
    right = labels[:, :-1] == labels[:, 1:]
    down = labels[:-1, :] == labels[1:, :]
    rows = np.concatenate([idx[:, :-1][right], idx[:-1, :][down]])
    cols = np.concatenate([idx[:, 1:][right], idx[1:, :][down]])
    g = coo_matrix((np.ones(len(rows), np.int8), (rows, cols)), shape=(H * W, H * W))
    n, comp = connected_components(g, directed=False)
    return n, comp.reshape(H, W)


def _component_adjacency(comp, ncomp):
    a = np.concatenate([comp[:, :-1].ravel(), comp[:-1, :].ravel()])
    b = np.concatenate([comp[:, 1:].ravel(), comp[1:, :].ravel()])
    diff = a != b
    pairs = np.unique(np.stack([np.concatenate([a[diff], b[diff]]),
                                np.concatenate([b[diff], a[diff]])], 1), axis=0)
    starts = np.searchsorted(pairs[:, 0], np.arange(ncomp + 1))
    return [pairs[starts[c]:starts[c + 1], 1] for c in range(ncomp)]


def enforce_connectivity(labels):
    """Merge every non-largest fragment of a label into the largest adjacent
    superpixel, then renumber ids densely in order of their old value."""
    H, W = labels.shape
    ncomp, comp = label_components(labels)
    comp_size = np.bincount(comp.ravel(), minlength=ncomp)
    comp_label = np.zeros(ncomp, dtype=np.int64)
    comp_label[comp.ravel()] = labels.ravel()

    # main fragment per label: largest, ties to lowest component id
    order = np.lexsort((np.arange(ncomp), -comp_size, comp_label))
    lead = np.ones(ncomp, bool)
    lead[1:] = comp_label[order][1:] != comp_label[order][:-1]
    is_main = np.zeros(ncomp, bool)
    is_main[order[lead]] = True

    if not is_main.all():
        adj = _component_adjacency(comp, ncomp)
        area = np.bincount(labels.ravel()).astype(np.int64)
        orphans = sorted(np.flatnonzero(~is_main).tolist(), key=lambda c: (comp_size[c], c))
        # Orphans only join fragments already known to be connected to their
        # label's main body, so every label stays one piece.
        while orphans:
            deferred = []
            for c in orphans:
                nb = adj[c][is_main[adj[c]]]
                if nb.size == 0:
                    deferred.append(c)
                    continue
                own = comp_label[c]
                cand = set(comp_label[nb].tolist())
                if own in cand:
                    target = own
                else:
                    target = min(cand, key=lambda t: (-area[t], t))
                    area[own] -= comp_size[c]
                    area[target] += comp_size[c]
                comp_label[c] = target
                is_main[c] = True
            if len(deferred) == len(orphans):
                raise RuntimeError("connectivity enforcement made no progress")
            orphans = deferred
        labels = comp_label[comp]

    _, dense = np.unique(labels, return_inverse=True)
    return dense.reshape(H, W).astype(np.int32)


def slic(image, target_count=DEFAULT_COUNT, compactness=DEFAULT_COMPACTNESS, iters=DEFAULT_ITERS):
    """Over-segment ``image`` (``[H, W, 3]`` RGB in [0, 1]) into roughly
    ``target_count`` compact, connected superpixels."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmptyImage(f"cannot segment image of shape {image.shape}")
    H, W = image.shape[:2]
    if target_count < 1:
        raise ValueError("target_count must be at least 1")
    if target_count > H * W:
        raise TargetTooLarge(f"target {target_count} exceeds pixel count {H * W}")
    if not compactness > 0:
        raise ValueError("compactness must be positive")

    lab = rgb_to_lab(image)
    step = math.sqrt(H * W / target_count)
    ny, nx = grid_shape(H, W, target_count)
    centers, labels = _seed_centers(lab, ny, nx)
    for _ in range(iters):
        labels = _assign(lab, centers, labels, step, compactness)
        centers = _update_centers(lab, labels, centers)

    assignment = enforce_connectivity(labels)
    count = int(assignment.max()) + 1
    final = _update_centers(lab, assignment, np.zeros((count, 5)))
    # stored as (L, a, b, x, y)
    final = final[:, [0, 1, 2, 4, 3]]
    assignment.setflags(write=False)
    final.setflags(write=False)
    return SuperpixelPartition(assignment, count, final)


def partition_from_assignment(assignment, image):
    """Rebuild a partition from a stored id map (ids must be dense from 0)."""
    ids = np.asarray(assignment)
    if ids.ndim != 2 or ids.shape != np.asarray(image).shape[:2]:
        raise ValueError(f"assignment {ids.shape} does not match image {np.asarray(image).shape[:2]}")
    if not np.all(np.isfinite(ids)) or np.any(ids != np.round(ids)) or ids.min() < 0:
        raise ValueError("superpixel ids must be non-negative integers")
    ids = ids.astype(np.int32)
    count = int(ids.max()) + 1
    if len(np.unique(ids)) != count:
        raise ValueError("superpixel ids are not dense")
    centers = _update_centers(rgb_to_lab(image), ids, np.zeros((count, 5)))[:, [0, 1, 2, 4, 3]]
    ids.setflags(write=False)
    centers.setflags(write=False)
    return SuperpixelPartition(ids, count, centers)
