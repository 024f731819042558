"""Deterministic synthetic scenes with CAM-like noisy score maps.

Each scene yields an RGB image, its ground-truth label map, per-class score
planes built from a morphologically corrupted copy of the ground truth, and
the probability maps of a simulated clean model whose confidence in the true
class depends on whether the resulting initial label is right or wrong.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camlab import DEFAULT_BG_THRESH, ScoreMapSet, assign_labels
from .errors import ShapeMismatch, ShapeOutOfCanvas
from .tensorio import LabelMap, write_image, write_label_map, write_tensor

CLASS_COLORS = np.array([
    [0.45, 0.42, 0.38],
    [0.80, 0.25, 0.20],
    [0.20, 0.65, 0.30],
    [0.25, 0.35, 0.80],
    [0.85, 0.75, 0.20],
    [0.65, 0.30, 0.70],
    [0.20, 0.70, 0.75],
    [0.90, 0.55, 0.15],
])


@dataclass
class Shape:
    """``kind`` is ``ellipse`` (center, radii), ``rectangle`` (center,
    half-sizes) or ``blob`` (center, base radius, ``harmonics`` of
    (amplitude, phase) pairs modulating the radius)."""

    kind: str
    cls: int
    color: tuple
    center: tuple
    size: tuple
    harmonics: tuple = ()


@dataclass
class NoiseSpec:
    dilate_px: int = 0
    erode_px: int = 0
    shift_px: int = 0
    shift_angle: float = 0.0
    flip_fraction: float = 0.0


@dataclass
class SceneSpec:
    height: int
    width: int
    num_classes: int
    shapes: list
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    fidelity_correct: float = 0.9
    fidelity_corrupt: float = 0.4
    fidelity_jitter: float = 0.0
    pixel_noise: float = 0.02
    background: tuple = tuple(CLASS_COLORS[0])
    seed: int = 0


@dataclass
class Scene:
    image: np.ndarray
    gt: LabelMap
    scores: ScoreMapSet
    probs: np.ndarray
    init: LabelMap


def _extent(shape):
    cy, cx = shape.center
    if shape.kind in ("ellipse", "rectangle"):
        ry, rx = shape.size
    elif shape.kind == "blob":
        r = shape.size[0] * (1 + sum(abs(a) for a, _ in shape.harmonics))
        ry = rx = r
    else:
        raise ValueError(f"unknown shape kind {shape.kind!r}")
    return cy - ry, cy + ry, cx - rx, cx + rx


def rasterize(shape, height, width):
    y0, y1, x0, x1 = _extent(shape)
    if y0 < -0.5 or x0 < -0.5 or y1 > height - 0.5 or x1 > width - 0.5:
        raise ShapeOutOfCanvas(f"{shape.kind} of class {shape.cls} leaves the {height}x{width} canvas")
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dy, dx = yy - shape.center[0], xx - shape.center[1]
    if shape.kind == "ellipse":
        return (dy / shape.size[0]) ** 2 + (dx / shape.size[1]) ** 2 <= 1.0
    if shape.kind == "rectangle":
        return (np.abs(dy) <= shape.size[0]) & (np.abs(dx) <= shape.size[1])
    theta = np.arctan2(dy, dx)
    radius = np.full_like(theta, float(shape.size[0]))
    for k, (amp, phase) in enumerate(shape.harmonics, start=2):
        radius += shape.size[0] * amp * np.cos(k * theta + phase)
    return np.hypot(dy, dx) <= radius


def _disk(r):
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def shift_mask(mask, dy, dx):
    out = np.zeros_like(mask)
    H, W = mask.shape
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    out[yd, xd] = mask[ys, xs]
    return out


def corrupt_mask(mask, noise):
    out = mask
    if noise.dilate_px > 0:
        out = ndimage.binary_dilation(out, _disk(noise.dilate_px))
    if noise.erode_px > 0:
        out = ndimage.binary_erosion(out, _disk(noise.erode_px))
    if noise.shift_px > 0:
        dy = int(round(noise.shift_px * math.sin(noise.shift_angle)))
        dx = int(round(noise.shift_px * math.cos(noise.shift_angle)))
        out = shift_mask(out, dy, dx)
    return out


def _minmax(plane):
    lo, hi = plane.min(), plane.max()
    return (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)


def generate(spec):
    rng = np.random.default_rng(spec.seed)
    H, W, C = spec.height, spec.width, spec.num_classes
    gt = np.zeros((H, W), dtype=np.int16)
    image = np.empty((H, W, 3))
    image[:] = spec.background
    for shape in spec.shapes:
        if not 1 <= shape.cls < C:
            raise ShapeMismatch(f"shape class {shape.cls} outside 1..{C - 1}")
        m = rasterize(shape, H, W)
        gt[m] = shape.cls
        image[m] = shape.color
    image = np.clip(image + rng.normal(0.0, spec.pixel_noise, image.shape), 0.0, 1.0)

    relevant = sorted(set(np.unique(gt).tolist()) - {0})
    planes = np.zeros((C - 1, H, W))
    for c in relevant:
        corrupted = corrupt_mask(gt == c, spec.noise).astype(np.float64)
        planes[c - 1] = _minmax(ndimage.uniform_filter(corrupted, size=5, mode="constant"))
    if spec.noise.flip_fraction > 0:
        flip = rng.random((H, W)) < spec.noise.flip_fraction
        choices = np.array([0] + relevant)
        target = choices[rng.integers(0, len(choices), (H, W))]
        for c in relevant:
            planes[c - 1][flip] = (target[flip] == c).astype(np.float64)
    if not relevant:
        raise ShapeMismatch("scene has no foreground shapes")
    scores = ScoreMapSet(planes, relevant)
    gt_map = LabelMap(gt, C)
    init = assign_labels(scores, DEFAULT_BG_THRESH)

    fid = np.where(init.labels == gt, spec.fidelity_correct, spec.fidelity_corrupt)
    if spec.fidelity_jitter > 0:
        fid = np.clip(fid + rng.normal(0.0, spec.fidelity_jitter, fid.shape), 0.0, 1.0)
    onehot = np.zeros((C, H, W))
    np.put_along_axis(onehot, gt[None].astype(np.intp), 1.0, axis=0)
    probs = fid[None] * onehot + (1.0 - fid[None]) / C
    probs /= probs.sum(axis=0, keepdims=True)
    return Scene(image, gt_map, scores, probs, init)


def corruption_rate(init, gt):
    """Fraction of pixels whose initial label differs from the ground truth."""
    if init.shape != gt.shape:
        raise ShapeMismatch(f"{init.shape} vs {gt.shape}")
    return float((init.labels != gt.labels).mean())


# ---------------------------------------------------------------- random suites


@dataclass
class SuiteSpec:
    count: int = 10
    seed: int = 0
    height: int = 128
    width: int = 128
    num_classes: int = 4
    shapes_min: int = 3
    shapes_max: int = 5
    radius_min: float = 14.0
    radius_max: float = 26.0
    dilate_px: tuple = (4, 8)
    erode_px: tuple = (0, 0)
    shift_px: tuple = (4, 9)
    flip_fraction: float = 0.0
    fidelity_correct: float = 0.9
    fidelity_corrupt: float = 0.4
    fidelity_jitter: float = 0.02
    pixel_noise: float = 0.03
    color_jitter: float = 0.06
    corruption_range: tuple = None
    max_redraws: int = 50


def random_scene(suite, index):
    """Scene ``index`` of a suite; depends only on (suite.seed, index).

    With ``corruption_range`` set, candidates are redrawn (deterministically)
    until the initial labels' corruption rate falls inside the range.
    """
    if suite.corruption_range is None:
        return _draw_scene(suite, index, 0)
    lo, hi = suite.corruption_range
    for attempt in range(suite.max_redraws):
        spec = _draw_scene(suite, index, attempt)
        scene = generate(spec)
        if lo <= corruption_rate(scene.init, scene.gt) <= hi:
            return spec
    raise ValueError(f"scene {index}: no draw within corruption range {lo}-{hi}")


def _draw_scene(suite, index, attempt):
    rng = np.random.default_rng([suite.seed, index, attempt])
    H, W = suite.height, suite.width
    n_shapes = int(rng.integers(suite.shapes_min, suite.shapes_max + 1))
    shapes = []
    for _ in range(n_shapes):
        cls = int(rng.integers(1, suite.num_classes))
        kind = ("ellipse", "rectangle", "blob")[int(rng.integers(0, 3))]
        r = float(rng.uniform(suite.radius_min, suite.radius_max))
        base = CLASS_COLORS[cls % len(CLASS_COLORS)]
        color = tuple(np.clip(base + rng.uniform(-suite.color_jitter, suite.color_jitter, 3), 0, 1))
        if kind == "blob":
            harmonics = tuple((float(rng.uniform(0.05, 0.15)), float(rng.uniform(0, 2 * np.pi)))
                              for _ in range(2))
            size = (r,)
            reach = r * (1 + sum(a for a, _ in harmonics))
        else:
            size = (r * float(rng.uniform(0.6, 1.0)), r * float(rng.uniform(0.6, 1.0)))
            if rng.random() < 0.5:
                size = size[::-1]
            harmonics = ()
            reach = max(size)
        margin = reach + 1
        center = (float(rng.uniform(margin, H - 1 - margin)), float(rng.uniform(margin, W - 1 - margin)))
        shapes.append(Shape(kind, cls, color, center, size, harmonics))
    noise = NoiseSpec(
        dilate_px=int(rng.integers(suite.dilate_px[0], suite.dilate_px[1] + 1)),
        erode_px=int(rng.integers(suite.erode_px[0], suite.erode_px[1] + 1)),
        shift_px=int(rng.integers(suite.shift_px[0], suite.shift_px[1] + 1)),
        shift_angle=float(rng.uniform(0, 2 * np.pi)),
        flip_fraction=suite.flip_fraction,
    )
    bg = tuple(np.clip(CLASS_COLORS[0] + rng.uniform(-suite.color_jitter, suite.color_jitter, 3), 0, 1))
    return SceneSpec(
        height=H, width=W, num_classes=suite.num_classes, shapes=shapes, noise=noise,
        fidelity_correct=suite.fidelity_correct, fidelity_corrupt=suite.fidelity_corrupt,
        fidelity_jitter=suite.fidelity_jitter, pixel_noise=suite.pixel_noise,
        background=bg, seed=int(rng.integers(0, 2 ** 31)),
    )


# ---------------------------------------------------------------- spec files and datasets


def _tuple_pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def suite_from_dict(data):
    known = {f for f in SuiteSpec.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown suite key(s) {sorted(unknown)}")
    kw = dict(data)
    for k in ("dilate_px", "erode_px", "shift_px"):
        if k in kw:
            kw[k] = tuple(int(x) for x in _tuple_pair(kw[k]))
    if kw.get("corruption_range") is not None:
        kw["corruption_range"] = tuple(float(x) for x in kw["corruption_range"])
    return SuiteSpec(**kw)


def scene_from_dict(data):
    """Explicit scene: canvas, classes, ``shapes`` list and optional ``noise`` table."""
    d = dict(data)
    shapes = []
    for s in d.pop("shapes", []):
        s = dict(s)
        cls = int(s["cls"])
        color = tuple(s.get("color", CLASS_COLORS[cls % len(CLASS_COLORS)]))
        shapes.append(Shape(s["kind"], cls, color, tuple(s["center"]), tuple(s["size"]),
                            tuple(tuple(h) for h in s.get("harmonics", ()))))
    noise = NoiseSpec(**d.pop("noise", {}))
    d.pop("id", None)
    if "background" in d:
        d["background"] = tuple(d["background"])
    return SceneSpec(shapes=shapes, noise=noise, **d)


def specs_from_toml(data):
    """``[suite]`` and/or ``[[scene]]`` tables -> list of (image_id, SceneSpec)."""
    unknown = set(data) - {"suite", "scene"}
    if unknown:
        raise ValueError(f"unknown table(s) {sorted(unknown)}")
    out = []
    if "suite" in data or "scene" not in data:
        suite = suite_from_dict(data.get("suite", {}))
        out += [(f"syn{i:04d}", random_scene(suite, i)) for i in range(suite.count)]
    for k, sc in enumerate(data.get("scene", [])):
        out.append((str(sc.get("id", f"scene{k:03d}")), scene_from_dict(sc)))
    ids = [i for i, _ in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate scene ids")
    return out


def write_scene(scene, image_id, outdir):
    """Write the five per-scene files; returns their paths keyed by role."""
    paths = {k: os.path.join(outdir, f"{image_id}_{k}.{ext}") for k, ext in
             (("image", "ppm"), ("gt", "pgm"), ("scores", "lmt"), ("probs", "lmt"), ("init", "pgm"))}
    write_image(scene.image, paths["image"])
    write_label_map(scene.gt, paths["gt"])
    write_tensor(scene.scores.planes.astype(np.float32), paths["scores"])
    write_tensor(scene.probs.astype(np.float32), paths["probs"])
    write_label_map(scene.init, paths["init"])
    return paths
