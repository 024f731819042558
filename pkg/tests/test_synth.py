import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from labelmend.camlab import assign_labels
from labelmend.errors import ShapeMismatch, ShapeOutOfCanvas
from labelmend.synth import (NoiseSpec, SceneSpec, Shape, SuiteSpec, corruption_rate, generate,
                             random_scene, specs_from_toml)
from labelmend.tensorio import LabelMap


def disc_scene(r=20, noise=None, size=64):
    c = (size - 1) / 2
    return SceneSpec(size, size, 2, [Shape("ellipse", 1, (1, 0, 0), (c, c), (r, r))],
                     noise=noise or NoiseSpec(), seed=4)


def test_zero_noise_interior_exact():
    spec = SceneSpec(50, 60, 3, [Shape("rectangle", 1, (1, 0, 0), (15, 15), (8, 10)),
                                 Shape("ellipse", 2, (0, 1, 0), (32, 40), (10, 12))])
    sc = generate(spec)
    g = sc.gt.labels
    flat = (ndimage.maximum_filter(g, 5) == ndimage.minimum_filter(g, 5))
    np.testing.assert_array_equal(sc.init.labels[flat], g[flat])
    assert (sc.init.labels != g).any()  # the blur halo exists


def test_shifted_disc_matches_pixel_count():
    r, size, s = 20, 64, 5
    sc = generate(disc_scene(r, NoiseSpec(shift_px=s, shift_angle=0.0), size))
    c = (size - 1) / 2
    disc = np.zeros((size, size), bool)
    moved = np.zeros((size, size), bool)
    for y in range(size):
        for x in range(size):
            disc[y, x] = (y - c) ** 2 + (x - c) ** 2 <= r * r
            moved[y, x] = (y - c) ** 2 + (x - s - c) ** 2 <= r * r
    # a pixel is labelled once at least 2 of the 25 box-filter taps hit the disc
    want = np.zeros((size, size), bool)
    for y in range(size):
        for x in range(size):
            want[y, x] = moved[max(0, y - 2):y + 3, max(0, x - 2):x + 3].sum() >= 2
    np.testing.assert_array_equal(sc.init.labels == 1, want)
    np.testing.assert_array_equal(sc.gt.labels == 1, disc)
    assert corruption_rate(sc.init, sc.gt) == pytest.approx((want ^ disc).mean())


def test_corruption_rate_cases():
    a = LabelMap(np.array([[0, 1], [1, 0]], np.int16), 2)
    assert corruption_rate(a, a) == 0.0
    assert corruption_rate(a, LabelMap(1 - a.labels, 2)) == 1.0
    with pytest.raises(ShapeMismatch):
        corruption_rate(a, LabelMap(np.zeros((1, 2), np.int16), 2))


def test_same_seed_same_scene():
    spec = random_scene(SuiteSpec(height=48, width=48, radius_min=6, radius_max=10), 3)
    a, b = generate(spec), generate(spec)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.probs.tobytes() == b.probs.tobytes()
    np.testing.assert_array_equal(a.init.labels, b.init.labels)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.integers(6, 14))
def test_more_dilation_never_less_corruption(d1, d2, r):
    lo, hi = sorted((d1, d2))
    rate = [corruption_rate(s.init, s.gt) for s in
            (generate(disc_scene(r, NoiseSpec(dilate_px=d), 40)) for d in (lo, hi))]
    assert rate[1] >= rate[0]


def test_probability_model():
    sc = generate(disc_scene(10, NoiseSpec(dilate_px=3), 32))
    np.testing.assert_allclose(sc.probs.sum(0), 1.0)
    right = sc.init.labels == sc.gt.labels
    p_true = np.take_along_axis(sc.probs, sc.gt.labels[None].astype(int), 0)[0]
    np.testing.assert_allclose(p_true[right], 0.9 + 0.1 / 2)
    np.testing.assert_allclose(p_true[~right], 0.4 + 0.6 / 2)


def test_flip_fraction_overrides_scores():
    sc = generate(disc_scene(10, NoiseSpec(flip_fraction=1.0), 32))
    assert set(np.unique(sc.scores.planes)) <= {0.0, 1.0}
    assert sc.init.labels.tolist() == assign_labels(sc.scores).labels.tolist()


def test_out_of_canvas():
    with pytest.raises(ShapeOutOfCanvas):
        generate(SceneSpec(20, 20, 2, [Shape("ellipse", 1, (1, 0, 0), (5, 5), (8, 8))]))


def test_corruption_range_redraw():
    suite = SuiteSpec(height=64, width=64, radius_min=8, radius_max=14, corruption_range=(0.15, 0.35))
    for i in range(3):
        sc = generate(random_scene(suite, i))
        assert 0.15 <= corruption_rate(sc.init, sc.gt) <= 0.35


def test_toml_tables():
    specs = specs_from_toml({
        "suite": {"count": 2, "height": 40, "width": 40, "radius_min": 5, "radius_max": 8},
        "scene": [{"id": "hand", "height": 30, "width": 30, "num_classes": 2,
                   "shapes": [{"kind": "blob", "cls": 1, "center": [15, 15], "size": [6],
                               "harmonics": [[0.1, 0.0]]}],
                   "noise": {"dilate_px": 2}}],
    })
    assert [i for i, _ in specs] == ["syn0000", "syn0001", "hand"]
    assert specs[2][1].noise.dilate_px == 2
    with pytest.raises(ValueError):
        specs_from_toml({"suite": {"bogus": 1}})
