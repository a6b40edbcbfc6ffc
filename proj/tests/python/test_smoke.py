import json
import math
import os
import pathlib

import pytest

import pisa

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"


def test_geometry():
    assert pisa.iou([0, 0, 2, 2], [1, 1, 3, 3]) == pytest.approx(1 / 7)
    d = pisa.encode_delta([0, 0, 2, 2], [0, 0, 4, 4])
    assert d == pytest.approx([0.5, 0.5, math.log(2), math.log(2)])
    assert pisa.apply_delta([0, 0, 2, 2], d) == pytest.approx([0, 0, 4, 4])
    assert pisa.smooth_l1(2.0) == 1.5


def test_ranking_and_weights():
    local, hlr = pisa.hierarchical_rank([0, 0, 1, 1], [0.9, 0.6, 0.8, 0.7])
    assert local == [0, 1, 0, 1]
    assert hlr == [0, 3, 1, 2]
    u = pisa.rank_to_importance([[0, 1, 2, 3], list(range(10))])
    assert u[0][2] == pytest.approx(0.8) and u[0][2] == u[1][2]
    assert pisa.importance_to_weight(0.5, 2.0, 0.0) == 0.25
    assert pisa.normalize_weights([1, 3], [1, 1]) == [0.5, 1.5]
    with pytest.raises(ValueError):
        pisa.importance_to_weight(0.5, 0.0, 0.0)


def test_carl():
    r = pisa.carl([1, 0], [1, 2], k=1.0, b=0.2)
    assert r["loss"] == pytest.approx(7 / 3)
    assert sum(r["c"]) == pytest.approx(2)
    with pytest.raises(ValueError):
        pisa.carl_grad_approx([0.5], [1.0])


def test_eval():
    assert pisa.average_precision([True, False, True], [0.9, 0.8, 0.7], 2) == pytest.approx((51 + 100 / 3) / 101)
    assert pisa.average_precision([], [], 0) is None
    assert pisa.nms([[0, 0, 5, 5], [0, 0, 5, 5]], [0.2, 0.9]) == [1]
    gts = json.loads((DATA / "perfect_gts.json").read_text())
    dets = json.loads((DATA / "perfect_dets.json").read_text())
    by_id = {im["image_id"]: dict(im) for im in gts}
    for im in dets:
        by_id[im["image_id"]]["dets"] = im["dets"]
    assert pisa.coco_map(list(by_id.values()))["map"] == 1.0


def test_config_and_training():
    cfg = pisa.default_config()
    assert cfg["isr"]["gamma_pos"] == 2.0 and cfg["carl"]["b"] == 0.2
    assert pisa.config_hash({}) == pisa.config_hash(cfg)
    assert pisa.config_hash({"isr": {"gamma_pos": 1.0}}) != pisa.config_hash({})
    with pytest.raises(pisa.ConfigError):
        pisa.config_hash({"isr": {"bogus": 1}})
    small = {"data": {"n_train": 8, "n_eval": 4}, "train": {"epochs": 2}}
    a = pisa.run_experiment(small, seed=3)
    b = pisa.run_experiment(small, seed=3)
    assert a == b
    assert len(a["epochs"]) == 2
    assert 0.0 <= a["eval"]["map"] <= 1.0


def test_cli(tmp_path):
    code = pisa.run_cli(["eval", "--dets", str(DATA / "perfect_dets.json"), "--gts", str(DATA / "perfect_gts.json"),
                         "--out", str(tmp_path)])
    assert code == 0
    report = next(tmp_path.rglob("report.json"))
    assert json.loads(report.read_text())["map"] == 1.0
    assert pisa.run_cli(["eval", "--dets", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 3
