import json

import numpy as np
import pytest

import brainssl


def test_phantom_shapes_and_determinism():
    a = brainssl.phantom(grid=(16, 16, 16), diseased=True, seed=4, lesion_radius=(2.0, 3.0))
    b = brainssl.phantom(grid=(16, 16, 16), diseased=True, seed=4, lesion_radius=(2.0, 3.0))
    assert a["data"].shape == (2, 16, 16, 16)
    assert a["mask"].shape == (3, 16, 16, 16)
    assert np.array_equal(a["data"], b["data"])
    # nested classes
    assert np.all(a["mask"][1] <= a["mask"][0]) and np.all(a["mask"][2] <= a["mask"][1])
    assert brainssl.phantom(grid=(16, 16, 16))["mask"] is None


def test_metrics_agree_with_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = (rng.random((8, 9, 10)) < 0.3).astype(np.uint8)
        g = (rng.random((8, 9, 10)) < 0.3).astype(np.uint8)
        want = 2 * (p & g).sum() / (p.sum() + g.sum())
        assert brainssl.dice(p, g) == pytest.approx(want)
        assert brainssl.volume_difference(p, g)[0] == abs(int(p.sum()) - int(g.sum()))


def test_components_connectivity():
    m = np.zeros((3, 3, 3), np.uint8)
    m[0, 0, 0] = m[1, 1, 1] = 1
    assert brainssl.connected_components(m, 26)[1] == 1
    labels, n = brainssl.connected_components(m, 6)
    assert n == 2 and labels[0, 0, 0] != labels[1, 1, 1]
    f1 = brainssl.lesionwise_f1(m, m)
    assert f1["tp"] == 1 and f1["f1"] == 1.0


def test_evaluate_masks():
    ph = brainssl.phantom(grid=(16, 16, 16), diseased=True, seed=1, lesion_radius=(2.0, 3.0))
    out = brainssl.evaluate_masks(ph["mask"], ph["mask"])
    assert out["dice"] == 1.0 and out["lesion_count_diff"] == 0


def test_scheduler_and_presets():
    assert brainssl.warmup_cosine_lr(10, 1e-3, 10, 100) == pytest.approx(1e-3)
    assert brainssl.warmup_cosine_lr(100, 1e-3, 10, 100) == pytest.approx(0.0, abs=1e-12)
    assert brainssl.train_preset("atlas-finetune")["stage"] == "finetune"


def test_param_counts_order():
    tiny = brainssl.count_parameters("tiny")
    small = brainssl.count_parameters("small")
    big = brainssl.count_parameters("big")
    assert tiny < small < big


def test_config_and_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"lr_peak": 1e-3}}))
    got = brainssl.load_experiment(cfg, ["train.total_steps=700"])
    assert got["train"]["total_steps"] == 700 and got["train"]["lr_peak"] == 1e-3
    assert "encoder.embed_dim" in brainssl.experiment_keys()
    with pytest.raises(brainssl.Error) as e:
        brainssl.load_experiment(cfg, ["encoder.depth=3"])
    assert e.value.kind == "config"
    with pytest.raises(brainssl.Error) as e:
        brainssl.read_checkpoint(tmp_path / "missing.ckpt")
    assert e.value.kind in ("io", "checkpoint")


def test_dataset_and_nifti_roundtrip(tmp_path):
    ids = brainssl.generate_dataset(tmp_path / "d", 2, grid=(16, 16, 16), seed=3)
    assert ids == ["sub-0000", "sub-0001"]
    vol = brainssl.read_nifti(tmp_path / "d" / "sub-0000_T1w.nii.gz")
    assert vol["data"].shape == (1, 16, 16, 16)
    brainssl.write_nifti(vol["data"][0], tmp_path / "x.nii.gz", vol["spacing"])
    again = brainssl.read_nifti(tmp_path / "x.nii.gz")
    assert np.array_equal(again["data"], vol["data"])
