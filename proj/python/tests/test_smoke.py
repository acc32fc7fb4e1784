import json
import math

import numpy as np
import pytest

import ltrp


def test_patchify_round_trip():
    img = np.random.default_rng(0).random((8, 12, 3), dtype=np.float32)
    p = ltrp.patchify(img, 4)
    assert p.shape == (6, 48)
    np.testing.assert_array_equal(p[1], img[0:4, 4:8].reshape(-1))
    np.testing.assert_array_equal(ltrp.unpatchify(p, 2, 3, 3, 4), img)
    with pytest.raises(ltrp.InvalidInput):
        ltrp.patchify(img, 5)


def test_sample_mask_is_seeded_partition():
    vis, masked = ltrp.sample_mask(4, 4, 0.75, 7)
    assert len(vis) == 4 and len(masked) == 12
    assert sorted(vis + masked) == list(range(16))
    assert ltrp.sample_mask(4, 4, 0.75, 7) == (vis, masked)


def test_losses_and_tau():
    assert ltrp.ranking_loss("listmle", [0.0, 0.0], [2.0, 1.0]) == pytest.approx(math.log(2))
    g = ltrp.loss_gradient("listmle", [0.3, -0.1, 0.7], [1.0, 2.0, 3.0])
    assert sum(g) == pytest.approx(0.0, abs=1e-12)
    assert ltrp.kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert ltrp.kendall_tau([1, 2, 3], [5, 5, 5]) is None
    with pytest.raises(ltrp.InvalidInput):
        ltrp.ranking_loss("hinge", [1.0], [1.0])


def test_clustering_and_selection():
    pts = np.array([[0, 0], [0.1, 0], [0, 0.1], [5, 5], [5.1, 5], [5, 5.1]], dtype=float)
    r = ltrp.dpc_knn(pts, 2, 2)
    assert len(r["centers"]) == 2
    assert r["assignment"][0] != r["assignment"][3]

    scores = [0.1 * i for i in range(16)]
    feats = np.random.default_rng(1).random((16, 4))
    idx, prov = ltrp.select_patches(scores, feats, keep_ratio=0.5)
    assert len(idx) == 8 and len(set(idx)) == 8
    assert idx[0] == 15
    assert set(prov) <= {"ranked", "cluster"}


def test_metrics_and_flops():
    s = np.zeros((4, 4), dtype=np.uint8)
    f = np.zeros((4, 4), dtype=np.uint8)
    s[:2] = 1
    f[:, :2] = 1
    m = ltrp.patch_metrics(s, f)
    assert m["iou"] == pytest.approx(4 / 12)
    assert m["precision"] == pytest.approx(0.5)
    vit = ltrp.flops_estimate(12, 768, 12, 4, 768, 1000, True, 197)
    assert vit["total"] == pytest.approx(17.6e9, rel=0.05)


def test_pseudo_scores_and_rendering():
    img = np.full((8, 8, 3), 0.2, dtype=np.float32)
    img[0:2, 0:2] = 0.9
    vis = [0, 3, 7, 11, 15]
    s = ltrp.pseudo_scores(img, 2, vis, "l1", "decoder")
    assert len(s) == 5 and s[0] == max(s)
    assert ltrp.image_distance(img, img, "ssim") == 0.0
    rec = ltrp.synthetic_reconstruct(img, 2, vis)
    np.testing.assert_array_equal(rec[0:2, 0:2], img[0:2, 0:2])
    assert ltrp.render_heat(img, 2, list(range(16))).shape == img.shape
    assert ltrp.render_keep(img, 2, vis).shape == img.shape


def test_config_and_pipeline(tmp_path):
    over = {"out": str(tmp_path / "run"), "workers": 4}
    cfg = ltrp.resolve_config(over)
    assert cfg["workers"] == 4
    assert ltrp.config_hash(over) == ltrp.config_hash({"out": "elsewhere"})
    assert ltrp.config_hash({"seed": 1}) != ltrp.config_hash({"seed": 2})
    with pytest.raises(ltrp.ConfigError):
        ltrp.resolve_config({"bogus": 1})

    small = {
        "out": str(tmp_path / "run"),
        "data": {"count": 24},
        "scorer": {"reconstructor": "synthetic"},
        "ranker": {"stack": {"depth": 1, "width": 16, "heads": 2}, "epochs": 1, "batch_size": 8},
    }
    out = ltrp.run_pipeline(small, stage="select")
    files = sorted(p.name for p in (out / "select").iterdir())
    assert "kr_0.5.jsonl" in files
    line = json.loads((out / "select" / "kr_0.5.jsonl").read_text().splitlines()[0])
    assert {"image_id", "indices", "provenance", "random"} <= set(line)
    assert not (out / "mae" / "model.ckpt").exists()
