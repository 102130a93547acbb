import json

import numpy as np
import pytest

from feastnet import checkpoint
from feastnet.cli import main
from feastnet.coarsening import CoarseningHierarchy, graclus_step
from feastnet.graph import Graph, icosphere, save_off


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def first_json(out):
    return json.loads(out.splitlines()[0])


def test_gradcheck_passes(capsys):
    code, out, _ = run(["gradcheck", "--trials", 6, "--model-trials", 1], capsys)
    assert code == 0
    assert first_json(out)["command"] == "gradcheck"
    assert "feast-conv" in out and "worst relative error" in out


def test_gradcheck_fault_injection(capsys, tmp_path):
    report = tmp_path / "r.json"
    code, out, _ = run(["gradcheck", "--trials", 4, "--model-trials", 1, "--inject-fault", "feast-conv",
                        "--out", report], capsys)
    assert code == 1
    assert "failed for: feast-conv" in out
    data = json.loads(report.read_text())
    assert set(data["failed"]) == {"feast-conv", "feast-conv-ti"}
    assert data["worst"]["linear"] < 1e-5


def test_gradcheck_bad_tolerance(capsys):
    code, _, err = run(["gradcheck", "--tolerance", 0], capsys)
    assert code == 2 and "tolerance" in err


def test_coarsen_path(capsys, tmp_path):
    pts = tmp_path / "path.xyz"
    pts.write_text("0 0 0\n1 0 0\n2 0 0\n3 0 0\n")
    out_path = tmp_path / "h.json"
    code, out, _ = run(["coarsen", pts, "--knn", 1, "--levels", 1, "--out", out_path], capsys)
    assert code == 0
    assert "level 1: 2 nodes" in out
    h = CoarseningHierarchy.from_json(out_path.read_text())
    path = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    _, m = graclus_step(path)
    assert h.matchings[0].clusters == m.clusters
    assert h.graphs[0] == path
    assert CoarseningHierarchy.from_json(h.to_json()) == h


def test_coarsen_mesh_and_too_deep(capsys, tmp_path):
    mesh = tmp_path / "s.off"
    save_off(icosphere(1), mesh)
    code, out, _ = run(["coarsen", mesh, "--levels", 2, "--out", tmp_path / "h.json"], capsys)
    assert code == 0 and "level 0: 42 nodes" in out
    code, _, err = run(["coarsen", mesh, "--levels", 12, "--out", tmp_path / "h2.json"], capsys)
    assert code == 2 and "cannot coarsen" in err


def test_unknown_flag_rejected(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", str(tmp_path / "x"), "--bogus", "1"])
    assert exc.value.code == 2


def test_unknown_config_option(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nwidth = 3\n")
    code, _, err = run(["train", "--config", cfg, "--out", tmp_path / "m.ckpt"], capsys)
    assert code == 2 and "width" in err


def train_toy(tmp_path, capsys, name, extra=()):
    cfg = tmp_path / "toy.ini"
    cfg.write_text("[train]\nlearning_rate = 0.05\nepochs = 2\n[model]\nM = 2\nwidth_scale = 0.25\n"
                   "[toy]\nsubdivisions = 1\n")
    ckpt = tmp_path / f"{name}.ckpt"
    code, out, _ = run(["train", "--config", cfg, "--out", ckpt, "--seed", 3, *extra], capsys)
    assert code == 0
    return ckpt, out


def test_train_toy_writes_checkpoint_and_log(tmp_path, capsys):
    ckpt, out = train_toy(tmp_path, capsys, "a", ["--epochs", 3])
    resolved = first_json(out)["config"]
    assert resolved["train"]["epochs"] == 3
    assert resolved["model"]["M"] == 2
    ck = checkpoint.load_checkpoint(ckpt)
    assert ck.epoch == 3 and ck.meta["config"] == resolved
    log = [json.loads(l) for l in ckpt.with_suffix(".ndjson").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2, 3]


def test_train_is_deterministic(tmp_path, capsys):
    a, _ = train_toy(tmp_path, capsys, "a")
    b, _ = train_toy(tmp_path, capsys, "b")
    assert a.with_suffix(".ndjson").read_text() == b.with_suffix(".ndjson").read_text()
    ca, cb = a.read_bytes(), b.read_bytes()
    assert ca == cb


def test_eval_matches_training_log(tmp_path, capsys):
    ckpt, _ = train_toy(tmp_path, capsys, "a")
    last = json.loads(ckpt.with_suffix(".ndjson").read_text().splitlines()[-1])
    out_json = tmp_path / "acc.json"
    code, out, _ = run(["eval", ckpt, "--metric", "accuracy", "--out", out_json], capsys)
    assert code == 0
    assert json.loads(out_json.read_text())["mean"] == last["train_accuracy"]


def test_eval_test_noise_needs_test_split(tmp_path, capsys):
    ckpt, _ = train_toy(tmp_path, capsys, "a")
    code, _, err = run(["eval", ckpt, "--test-noise", 0.1], capsys)
    assert code == 2 and "--split test" in err
    code, out, _ = run(["eval", ckpt, "--split", "test", "--test-noise", 0.1], capsys)
    assert code == 0 and first_json(out)["config"]["eval"]["test_noise"] == 0.1


def test_eval_geodesic_and_miou_on_exact_predictions(tmp_path, capsys, monkeypatch):
    ckpt, _ = train_toy(tmp_path, capsys, "a")
    from feastnet import models
    monkeypatch.setattr(models, "predict", lambda spec, params, X, graph=None, hierarchy=None, class_mask=None: np.arange(len(X)))
    out_json = tmp_path / "g.json"
    code, _, _ = run(["eval", ckpt, "--metric", "geodesic-curve", "--thresholds", 0, 0.1, "--out", out_json], capsys)
    assert code == 0
    rows = json.loads(out_json.read_text())["curve"]
    assert rows[0] == {"threshold": 0.0, "fraction": 1.0}
    code, out, _ = run(["eval", ckpt, "--metric", "miou"], capsys)
    assert code == 0 and "miou 1.000000" in out


def test_eval_rejects_mismatched_data(tmp_path, capsys):
    ckpt, _ = train_toy(tmp_path, capsys, "a")
    ref = tmp_path / "ref.off"
    save_off(icosphere(2), ref)
    code, _, err = run(["eval", ckpt, "--task", "correspondence", "--reference", ref, "--meshes", ref], capsys)
    assert code == 2 and "classes" in err


def test_correspondence_task(tmp_path, capsys):
    ref = tmp_path / "ref.off"
    save_off(icosphere(1), ref)
    ckpt = tmp_path / "c.ckpt"
    code, _, _ = run(["train", "--task", "correspondence", "--reference", ref, "--meshes", ref, ref,
                      "--epochs", 1, "--M", 2, "--width-scale", 0.25, "--out", ckpt], capsys)
    assert code == 0
    code, out, _ = run(["eval", ckpt, "--reference", ref, "--meshes", ref], capsys)
    assert code == 0 and out.splitlines()[-1].startswith("accuracy")


def test_partlabel_task(tmp_path, capsys):
    rng = np.random.default_rng(0)
    files = []
    for k in range(2):
        pts = rng.normal(size=(30, 3))
        lab = (pts[:, 0] > 0).astype(int) + 2
        p, l = tmp_path / f"{k}.pts", tmp_path / f"{k}.seg"
        np.savetxt(p, pts)
        np.savetxt(l, lab, fmt="%d")
        files.append((p, l))
    ckpt = tmp_path / "p.ckpt"
    args = ["--points", *[f[0] for f in files], "--labels", *[f[1] for f in files], "--parts", 2, 3, 4]
    code, _, _ = run(["train", "--task", "partlabel", *args, "--n-classes", 6, "--knn", 4, "--epochs", 1,
                      "--M", 2, "--width-scale", 0.0625, "--out", ckpt], capsys)
    assert code == 0
    code, out, _ = run(["eval", ckpt, "--metric", "miou", *args], capsys)
    assert code == 0 and "miou" in out


def test_sweep(tmp_path, capsys):
    out_path = tmp_path / "s.ndjson"
    code, out, _ = run(["sweep", "--setting", "M", "--values", 1, 2, "--epochs", 1, "--width-scale", 0.25,
                        "--n-test", 1, "--out", out_path], capsys)
    assert code == 0
    rows = [json.loads(l) for l in out_path.read_text().splitlines()]
    assert [r["value"] for r in rows] == [1, 2]
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
