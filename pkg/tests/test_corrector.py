import os

import numpy as np
import pytest

from labelmend import UNLABELED, gat
from labelmend.config import PipelineConfig
from labelmend.corrector import (PREDICTED, SEEDED, NodeLabelAssignment, correct_image,
                                 embed_clean, project, run_pipeline, superpixel_majority)
from labelmend.errors import EmptySeedSet
from labelmend.gat import TrainConfig
from labelmend.manifest import HANDCRAFTED, ManifestRow
from labelmend.superpixel import SuperpixelPartition, slic
from labelmend.synth import SuiteSpec, generate, random_scene, write_scene
from labelmend.tensorio import LabelMap, read_image, read_label_map

from oracles import graph_of


def partition(a):
    a = np.asarray(a, np.int32)
    n = int(a.max()) + 1
    return SuperpixelPartition(a, n, np.zeros((n, 5)))


def test_embed_majority_margin_and_ties():
    cat, dog = 3, 5
    part = partition([[0, 0, 0, 1, 1, 2]])
    init = LabelMap(np.array([[cat, cat, dog, cat, dog, cat]], np.int16), 6)
    clean = np.array([[True, True, True, True, True, False]])
    s = embed_clean(clean, init, part)
    assert s.labels.tolist() == [cat, cat, -1]
    np.testing.assert_allclose(s.margins, [2 / 3, 0.5, 0.0])
    assert s.count == 2


def test_embed_ignores_unlabeled_pixels():
    part = partition([[0, 0]])
    init = LabelMap(np.array([[UNLABELED, 1]], np.int16), 2)
    s = embed_clean(np.ones((1, 2), bool), init, part)
    assert s.labels.tolist() == [1]


def _grid_case():
    """4 superpixels on a 2x2 block grid; superpixels 0/1 are class 1, 2/3 class 2."""
    a = np.kron(np.array([[0, 1], [2, 3]]), np.ones((3, 3), int))
    part = partition(a)
    X = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0], [0.1, 1.0]])
    A = np.ones((4, 4), bool)
    return part, graph_of(X, A)


def test_all_seeded_skips_training():
    part, g = _grid_case()
    seeds = NodeLabelAssignment(np.array([1, 2, 0, 1]), np.ones(4), 3)
    r = correct_image(g, seeds, part, TrainConfig(epochs=5))
    assert not r.trained
    np.testing.assert_array_equal(r.corrected.labels, project([1, 2, 0, 1], part, 3).labels)


def test_single_class_fills_everything():
    part, g = _grid_case()
    seeds = NodeLabelAssignment(np.array([-1, 2, -1, -1]), np.ones(4), 3)
    r = correct_image(g, seeds, part, TrainConfig(epochs=5))
    assert not r.trained and (r.corrected.labels == 2).all()
    assert r.source.tolist() == [PREDICTED, SEEDED, PREDICTED, PREDICTED]


def test_no_seeds_is_an_error():
    part, g = _grid_case()
    with pytest.raises(EmptySeedSet):
        correct_image(g, NodeLabelAssignment(np.full(4, -1), np.zeros(4), 3), part, TrainConfig())


def test_trained_correction_keeps_seeds():
    part, g = _grid_case()
    # a deliberately "wrong" seed on node 1 must survive GAT prediction
    seeds = NodeLabelAssignment(np.array([1, 2, 2, -1]), np.ones(4), 3)
    r = correct_image(g, seeds, part, TrainConfig(epochs=60))
    assert r.trained
    assert r.node_labels[:3].tolist() == [1, 2, 2]
    assert UNLABELED not in r.corrected.labels
    r2 = correct_image(g, seeds, part, TrainConfig(epochs=60), trust_gat_everywhere=True)
    assert (r2.source == PREDICTED).all()


def test_divergence_falls_back_to_initial_labels(monkeypatch):
    part, g = _grid_case()
    init = LabelMap(np.kron(np.array([[1, 1], [2, 0]]), np.ones((3, 3), int)).astype(np.int16), 3)

    def boom(*a, **k):
        raise gat.DivergedLoss("nan", [1.0, float("nan")])

    monkeypatch.setattr(gat, "train", boom)
    seeds = NodeLabelAssignment(np.array([1, -1, 2, -1]), np.ones(4), 3)
    r = correct_image(g, seeds, part, TrainConfig(), init_labels=init)
    assert r.fell_back
    assert r.node_labels.tolist() == [1, 1, 2, 0]


def test_majority_projection():
    part = partition([[0, 0, 1, 1]])
    init = LabelMap(np.array([[2, 2, 1, 0]], np.int16), 3)
    assert superpixel_majority(init, part).tolist() == [2, 0]


def _dataset(tmp_path, n=3, noise=True):
    suite = SuiteSpec(count=n, height=48, width=48, radius_min=8, radius_max=12, shapes_min=2,
                      shapes_max=3, dilate_px=(2, 3), shift_px=(2, 3))
    rows = []
    for i in range(n):
        scene = generate(random_scene(suite, i))
        p = write_scene(scene, f"im{i}", tmp_path)
        rows.append(ManifestRow(f"im{i}", p["image"], p["probs"], HANDCRAFTED,
                                tuple(sorted(scene.scores.relevant)), gt=p["gt"],
                                scores=p["scores"], init=None if noise else p["gt"]))
    return rows


def _cfg(**kw):
    base = dict(theta=0.1, superpixels=60, epochs=40, workers=1)
    base.update(kw)
    return PipelineConfig(**base)


def test_pipeline_empty_manifest(tmp_path):
    assert run_pipeline([], _cfg(), tmp_path / "out") == []


def test_pipeline_marks_bad_rows_failed(tmp_path):
    rows = _dataset(tmp_path, 2)
    rows[0].probs = str(tmp_path / "missing.lmt")
    res = run_pipeline(rows, _cfg(), tmp_path / "out")
    assert [r["status"] for r in res] == ["failed", "ok"]
    assert "missing.lmt" in res[0]["message"]
    assert os.path.exists(tmp_path / "out" / "im1_corrected.pgm")


def test_pipeline_outputs_valid_maps(tmp_path):
    rows = _dataset(tmp_path, 3)
    res = run_pipeline(rows[::-1], _cfg(), tmp_path / "out")
    assert [r["image_id"] for r in res] == ["im0", "im1", "im2"]
    for r in res:
        assert r["status"] == "ok"
        m = read_label_map(tmp_path / "out" / f"{r['image_id']}_corrected.pgm")
        assert m.labeled.all() and m.labels.max() < m.num_classes
        assert 0 <= r["seed_precision"] <= 1


def test_zero_noise_fixed_point(tmp_path):
    rows = _dataset(tmp_path, 2, noise=False)
    cfg = _cfg(theta=10.0)
    res = run_pipeline(rows, cfg, tmp_path / "out")
    for row, r in zip(rows, res):
        assert r["status"] == "ok" and r["seeded"] == r["superpixels"] and not r["trained"]
        gt = read_label_map(row.gt)
        part = slic(read_image(row.image), cfg.superpixels, cfg.compactness, cfg.slic_iters)
        want = project(superpixel_majority(gt, part), part, gt.num_classes)
        got = read_label_map(tmp_path / "out" / f"{r['image_id']}_corrected.pgm")
        np.testing.assert_array_equal(got.labels, want.labels)
