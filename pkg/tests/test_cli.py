import filecmp
import json
import os

import numpy as np
import pytest

from rerankkit import cli, data
from rerankkit.model import ScoringModel, load_model, save_model


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert run("synth", "--seed", 11, "--scenes", 6, "--proposals", 80, "--out", out) == 0
    return out


def test_synth_outputs(dataset):
    names = os.listdir(dataset)
    assert "manifest.tsv" in names and "answer_key.csv" in names
    assert "synth_config.json" in names
    cfg = json.loads((dataset / "synth_config.json").read_text())
    assert cfg["seed"] == 11 and cfg["scenes"] == 6


def test_synth_deterministic(tmp_path):
    for name in ("r1", "r2"):
        assert run("synth", "--seed", 4, "--scenes", 2, "--proposals", 50,
                   "--out", tmp_path / name) == 0
    for f in os.listdir(tmp_path / "r1"):
        if f.endswith("_config.json"):
            continue  # echoes the differing --out path by design
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes(), f


def test_train_rerank_eval_pipeline(dataset, tmp_path):
    run_dir = tmp_path / "run"
    assert run("train", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--C", 10, "--out", run_dir) == 0
    model_path = run_dir / "model_class2.txt"
    model = load_model(str(model_path))
    assert model.class_id == 2
    trace = (run_dir / "train_trace_class2.csv").read_text().splitlines()
    assert trace[0] == "round,working_set_size,max_violation,objective"
    assert len(trace) > 1

    rr = tmp_path / "rr"
    assert run("rerank", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--model", model_path, "--out", rr) == 0
    reranked = sorted(f for f in os.listdir(rr) if f.endswith("_reranked.csv"))
    assert len(reranked) == 6
    header = (rr / reranked[0]).read_text().splitlines()[0]
    assert header == "x1,y1,x2,y2,score,objectness,rerank_score"
    # scores column is non-increasing down each file
    for f in reranked:
        scores = [float(l.split(",")[-1]) for l in (rr / f).read_text().splitlines()[1:]]
        assert all(b <= a for a, b in zip(scores, scores[1:]))

    ev = tmp_path / "ev"
    assert run("eval", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--budgets", "5,10,20,40,80", "--rankings", rr, "--out", ev) == 0
    for name in ("recall_vs_k.csv", "recall_vs_iou.csv", "ar_vs_k.csv"):
        assert (ev / name).exists()


def test_rerank_zero_model_preserves_order(dataset, tmp_path):
    model_path = tmp_path / "zero.txt"
    save_model(ScoringModel(class_id=2, weights=np.zeros(7)), str(model_path))
    out = tmp_path / "rrz"
    assert run("rerank", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--model", model_path, "--out", out) == 0
    manifest, scenes = data.load_dataset(str(dataset / "manifest.tsv"))
    for scene in scenes:
        order = [int(l) for l in (out / f"{scene.id}_order.csv").read_text().splitlines()]
        assert order == list(range(len(scene.proposals)))


def test_rerank_class_mismatch_exit_5(dataset, tmp_path):
    model_path = tmp_path / "wrong.txt"
    save_model(ScoringModel(class_id=9, weights=np.zeros(7)), str(model_path))
    assert run("rerank", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--model", model_path, "--out", tmp_path / "o") == 5


def test_unknown_class_exit_2(dataset, tmp_path):
    assert run("eval", "--manifest", dataset / "manifest.tsv", "--class", "nope",
               "--out", tmp_path / "o") == 2


def test_missing_manifest_exit_3(tmp_path):
    assert run("eval", "--manifest", tmp_path / "missing.tsv", "--class", "class2",
               "--out", tmp_path / "o") == 3


def test_eval_oracle_beats_generator_order(dataset, tmp_path):
    base, orc = tmp_path / "base", tmp_path / "orc"
    assert run("eval", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--budgets", "5,10", "--out", base) == 0
    assert run("eval", "--manifest", dataset / "manifest.tsv", "--class", "class2",
               "--budgets", "5,10", "--oracle", "--out", orc) == 0

    def recall_at(p):
        return float(p.read_text().splitlines()[1].split(",")[2])

    assert recall_at(orc / "recall_vs_k.csv") >= recall_at(base / "recall_vs_k.csv")


def test_end_to_end_determinism(tmp_path):
    """synth -> train -> rerank -> eval twice; byte-identical outputs."""
    results = []
    for name in ("p1", "p2"):
        root = tmp_path / name
        ds = root / "ds"
        assert run("synth", "--seed", 77, "--scenes", 4, "--proposals", 60, "--out", ds) == 0
        assert run("train", "--manifest", ds / "manifest.tsv", "--class", "class2",
                   "--C", 10, "--out", root / "run") == 0
        assert run("rerank", "--manifest", ds / "manifest.tsv", "--class", "class2",
                   "--model", root / "run" / "model_class2.txt", "--out", root / "rr") == 0
        assert run("eval", "--manifest", ds / "manifest.tsv", "--class", "class2",
                   "--budgets", "5,10,20", "--rankings", root / "rr", "--out", root / "ev") == 0
        results.append(root)
    for sub in ("run", "rr", "ev"):
        a, b = results[0] / sub, results[1] / sub
        cmp = filecmp.dircmp(str(a), str(b))
        assert not cmp.left_only and not cmp.right_only
        for f in sorted(os.listdir(a)):
            if f.endswith("_config.json"):
                continue  # echoes the differing output paths by design
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
