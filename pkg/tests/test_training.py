import numpy as np
import pytest

from barnetkit.checkpoint import read_checkpoint, save_checkpoint
from barnetkit.config import RunConfig, parse_config
from barnetkit.data import load_dataset
from barnetkit.model import BarnetMini
from barnetkit.training import (VARIANTS, ensure_dataset, evaluate,
                                predict_mask, run_ablation, run_training)


def micro_config(tmp_path, **overrides):
    base = dict(height=32, width=32, widths=(4, 6, 8, 10), n_compress=4,
                train_count=6, test_count=3, steps=2, batch_size=2,
                data_root=str(tmp_path / "data"))
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def shared(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("training")
    cfg = micro_config(tmp)
    result = run_training(cfg, tmp / "run")
    return cfg, result, tmp


def test_ensure_dataset_generates_then_reuses(tmp_path):
    cfg = micro_config(tmp_path)
    root = ensure_dataset(cfg)
    manifest = (root / "manifest.txt").read_bytes()
    stamp = (root / "manifest.txt").stat().st_mtime_ns
    again = ensure_dataset(cfg)
    assert again == root
    assert (root / "manifest.txt").stat().st_mtime_ns == stamp
    assert (root / "manifest.txt").read_bytes() == manifest


def test_run_writes_artifacts(shared):
    cfg, result, tmp = shared
    out = tmp / "run"
    assert (out / "model.ckpt").exists()
    assert parse_config((out / "config.txt").read_text()) == cfg
    rows = (out / "loss.csv").read_text().splitlines()
    assert rows[0] == "step,lr,loss"
    assert len(rows) == cfg.steps + 1
    assert rows[1].startswith("1,")
    assert len(result["losses"]) == cfg.steps


def test_checkpoint_hash_matches_config(shared):
    cfg, result, tmp = shared
    _, stored = read_checkpoint(result["checkpoint"])
    assert stored == cfg.config_hash()


def test_identical_configs_identical_runs(tmp_path):
    cfg = micro_config(tmp_path)
    a = run_training(cfg, tmp_path / "a")
    b = run_training(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "loss.csv").read_bytes() == \
           (tmp_path / "b" / "loss.csv").read_bytes()
    assert a["checkpoint"].read_bytes() == b["checkpoint"].read_bytes()


def test_zero_steps_writes_initialization(tmp_path):
    cfg = micro_config(tmp_path, steps=0)
    result = run_training(cfg, tmp_path / "init")
    assert result["losses"] == []
    records, _ = read_checkpoint(result["checkpoint"])
    model = BarnetMini(**cfg.model_kwargs())
    for name, p in model.parameters().items():
        np.testing.assert_array_equal(records[name], p.data)


def test_predict_mask_is_valid_labeling(shared):
    cfg, result, tmp = shared
    sample = load_dataset(result["data_root"], "test")[0]
    pred = predict_mask(result["model"], sample.image)
    assert pred.dtype == np.uint8
    assert pred.shape == sample.mask.shape
    assert pred.max() < cfg.num_classes


def test_evaluate_thread_count_does_not_change_report(shared):
    cfg, result, tmp = shared
    test_set = load_dataset(result["data_root"], "test")
    solo, preds1 = evaluate(result["model"], test_set, cfg.num_classes,
                            threads=1)
    pooled, preds3 = evaluate(result["model"], test_set, cfg.num_classes,
                              threads=3)
    assert solo.to_csv() == pooled.to_csv()
    for a, b in zip(preds1, preds3):
        np.testing.assert_array_equal(a, b)


@pytest.mark.slow
def test_loss_trends_down(tmp_path):
    cfg = micro_config(tmp_path, steps=40, train_count=8, lr0=0.004)
    result = run_training(cfg, tmp_path / "run")
    losses = result["losses"]
    assert np.mean(losses[-5:]) < 0.75 * np.mean(losses[:5])


def test_ablation_grid(tmp_path):
    cfg = micro_config(tmp_path, steps=1)
    results = run_ablation(cfg, tmp_path / "abl", seeds=(0,))
    assert [r["variant"] for r in results] == [v[0] for v in VARIANTS]
    by_name = {r["variant"]: r for r in results}
    assert by_name["basic"]["params"] < by_name["full"]["params"]
    assert by_name["basic"]["params"] == by_name["basic+bam"]["params"]
    text = (tmp_path / "abl" / "ablate.csv").read_text().splitlines()
    assert text[0] == "variant,use_bam,use_arf,params,median_miou,median_mdice"
    assert len(text) == 5
    runs = (tmp_path / "abl" / "runs.csv").read_text().splitlines()
    assert runs[0] == "variant,seed,miou,mdice,final_loss"
    assert len(runs) == 5
    for line in text[1:]:
        miou = float(line.split(",")[4])
        assert 0.0 <= miou <= 1.0
