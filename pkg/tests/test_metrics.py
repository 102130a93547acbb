import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feastnet import metrics
from feastnet.graph import Mesh, icosphere
from oracles import floyd_warshall, set_iou


def strip_mesh(n):
    """Unit-spaced path 0..n-1 along x, closed into triangles by far-away apexes."""
    verts = [[float(i), 0.0, 0.0] for i in range(n)] + [[i + 0.5, 50.0, 0.0] for i in range(n - 1)]
    faces = [(i, i + 1, n + i) for i in range(n - 1)]
    return Mesh(verts, faces)


# -- accuracy ---------------------------------------------------------------


def test_accuracy_examples():
    assert metrics.correspondence_accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert metrics.correspondence_accuracy([0, 1, 2, 0], [0, 1, 2, 3]) == 0.75
    with pytest.raises(ValueError):
        metrics.correspondence_accuracy([], [])
    with pytest.raises(ValueError):
        metrics.correspondence_accuracy([0], [0, 1])


# -- geodesic curves --------------------------------------------------------


def test_exact_predictions_curve():
    m = strip_mesh(5)
    gt = np.arange(5)
    curve = metrics.geodesic_error_curve(gt, gt, m, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(curve.fractions, [1.0, 1.0, 1.0])


def test_off_by_one_on_path():
    m = strip_mesh(5)
    gt = np.arange(5)
    pred = gt.copy()
    pred[2] = 3
    err = metrics.geodesic_errors(pred, gt, m)
    np.testing.assert_array_equal(err, [0, 0, 1, 0, 0])
    curve = metrics.geodesic_error_curve(pred, gt, m, [0.0, 0.99, 1.0, 2.0])
    np.testing.assert_array_equal(curve.fractions, [0.8, 0.8, 1.0, 1.0])


def test_disconnected_reference():
    m = Mesh(np.eye(3).tolist() + [[4.0, 4.0, 4.0]], [(0, 1, 2)])
    with pytest.raises(ValueError):
        metrics.geodesic_errors([0], [0], m)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_curve_matches_all_pairs_oracle(seed):
    rng = np.random.default_rng(seed)
    base = icosphere(1)
    mesh = Mesh(base.vertices * rng.uniform(0.7, 1.3, size=(base.n_vertices, 1)), base.faces)
    full = floyd_warshall(mesh)
    gt = rng.integers(mesh.n_vertices, size=30)
    pred = np.where(rng.random(30) < 0.3, gt, rng.integers(mesh.n_vertices, size=30))
    th = np.sort(rng.uniform(0, 2, size=6))
    curve = metrics.geodesic_error_curve(pred, gt, mesh, th)
    err = full[gt, pred]
    np.testing.assert_allclose(metrics.geodesic_errors(pred, gt, mesh), err, rtol=1e-12)
    expected = [np.mean(err <= t) for t in th]
    np.testing.assert_array_equal(curve.fractions, expected)
    assert np.all(np.diff(curve.fractions) >= 0)
    at_zero = metrics.geodesic_error_curve(pred, gt, mesh, [0.0]).fractions[0]
    assert at_zero == metrics.correspondence_accuracy(pred, gt)


# -- mIoU -------------------------------------------------------------------


def test_miou_five_twelfths():
    # parts A=0, B=1 with the worked counts; C=2 absorbs the mismatches,
    # since two labels alone cannot give unions of 2 and 3 at once
    gt = [0, 0, 1, 1, 2]
    pred = [0, 2, 1, 2, 1]
    assert set_iou(pred, gt, 0) == Fraction(1, 2)
    assert set_iou(pred, gt, 1) == Fraction(1, 3)
    ious, mean = metrics.miou(pred, gt, [0, 1, 2])
    assert ious[:2] == [0.5, 1 / 3]
    assert (ious[0] + ious[1]) / 2 == pytest.approx(5 / 12, abs=1e-15)
    assert mean == pytest.approx(float(sum(set_iou(pred, gt, k) for k in range(3)) / 3), abs=1e-15)


def test_miou_perfect_and_absent():
    ious, mean = metrics.miou([1, 1, 2], [1, 1, 2], [1, 2, 3])
    assert ious == [1.0, 1.0, 1.0] and mean == 1.0


def test_miou_label_outside_set():
    with pytest.raises(ValueError):
        metrics.miou([0, 5], [0, 1], [0, 1])


def test_dataset_miou_weighting():
    out = metrics.dataset_miou([("mug", 1.0), ("mug", 0.5), ("cap", 0.0)])
    assert out["overall"] == pytest.approx(0.5)
    assert out["per_category"] == {"mug": 0.75, "cap": 0.0}
    with pytest.raises(ValueError):
        metrics.dataset_miou([])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_miou_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    gt, pred = rng.integers(4, size=n), rng.integers(4, size=n)
    perm = rng.permutation(n)
    a = metrics.miou(pred, gt, range(4))
    b = metrics.miou(pred[perm], gt[perm], range(4))
    assert a == b
    assert (a[1] == 1.0) == bool(np.all(pred == gt))


# -- sweeps and tables ------------------------------------------------------


class FakeTask:
    def __init__(self):
        self.calls = []

    def run(self, cfg, **overrides):
        self.calls.append((cfg, overrides))
        return {"accuracy": float(overrides.get("M", len(cfg.noise_levels)))}


def test_sweep_rows():
    from feastnet.trainer import TrainConfig
    task = FakeTask()
    rows = metrics.ablation_sweep(task, "M", [1, 2, 4, 8], TrainConfig())
    assert [r["value"] for r in rows] == [1, 2, 4, 8]
    assert [r["accuracy"] for r in rows] == [1.0, 2.0, 4.0, 8.0]
    rows = metrics.ablation_sweep(task, "noise_levels", [(), (0.1, 0.2)], TrainConfig())
    assert task.calls[-1][0].noise_levels == (0.1, 0.2)
    assert [r["accuracy"] for r in rows] == [0.0, 2.0]


def test_sweep_threads_keep_order(monkeypatch):
    from feastnet.trainer import TrainConfig
    monkeypatch.setenv("FEAST_THREADS", "3")
    rows = metrics.ablation_sweep(FakeTask(), "M", [8, 1, 4], TrainConfig())
    assert [r["value"] for r in rows] == [8, 1, 4]


def test_single_setting_sweep_equals_plain_run():
    from feastnet.toy import ToyCorrespondence, ToyExperiment
    from feastnet.trainer import TrainConfig
    task = ToyExperiment(ToyCorrespondence(subdivisions=1, n_test=1), M=2, width_scale=0.25)
    cfg = TrainConfig(learning_rate=0.05, epochs=3)
    rows = metrics.ablation_sweep(task, "M", [2], cfg)
    assert rows[0]["accuracy"] == task.run(cfg, M=2)["accuracy"]


def test_ndjson_and_table():
    rows = [{"setting": "M", "value": 8, "accuracy": np.float64(0.5)}, {"setting": "M", "value": 1, "accuracy": 0.25}]
    lines = metrics.to_ndjson(rows).splitlines()
    assert [json.loads(l)["accuracy"] for l in lines] == [0.5, 0.25]
    table = metrics.format_table(rows).splitlines()
    assert table[0].split() == ["setting", "value", "accuracy"]
    assert table[2].split() == ["M", "8", "0.5000"]
