import subprocess
import sys

import numpy as np
import pytest

from barnetkit.checkpoint import read_checkpoint, save_checkpoint
from barnetkit.cli import main
from barnetkit.config import RunConfig
from barnetkit.model import BarnetMini


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny dataset plus one trained run, shared across CLI tests."""
    tmp = tmp_path_factory.mktemp("cli")
    cfg_path = tmp / "small.cfg"
    cfg_path.write_text(
        "height = 32\nwidth = 32\nwidths = 4,6,8,10\nn_compress = 4\n"
        f"steps = 2\nbatch_size = 2\ntrain_count = 6\ntest_count = 3\n"
        f"data_root = {tmp / 'data'}\n")
    assert main(["gen-data", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path),
                 "--out", str(tmp / "run")]) == 0
    return tmp, cfg_path


def test_gen_data_writes_manifest(workspace):
    tmp, _ = workspace
    manifest = (tmp / "data" / "manifest.txt").read_text().splitlines()
    assert len(manifest) == 9
    assert manifest[0].startswith("train\t")
    assert manifest[-1].startswith("test\t")


def test_train_artifacts(workspace):
    tmp, _ = workspace
    out = tmp / "run"
    assert (out / "model.ckpt").exists()
    assert (out / "loss.csv").read_text().startswith("step,lr,loss")
    assert (out / "report.csv").read_text().startswith("class,iou,dice")


def test_eval_writes_reports_and_masks(workspace, capsys):
    tmp, cfg_path = workspace
    code = main(["eval", "--config", str(cfg_path),
                 "--checkpoint", str(tmp / "run" / "model.ckpt"),
                 "--out", str(tmp / "ev")])
    assert code == 0
    assert "mIoU" in capsys.readouterr().out
    assert (tmp / "ev" / "report.csv").exists()
    assert (tmp / "ev" / "confusion.csv").exists()
    masks = sorted((tmp / "ev" / "preds").glob("*.pgm"))
    assert len(masks) == 3
    assert masks[0].read_bytes().startswith(b"P5\n32 32\n255\n")


def test_eval_hash_mismatch_is_refused(workspace, capsys):
    tmp, cfg_path = workspace
    code = main(["eval", "--config", str(cfg_path), "--seed", "99",
                 "--checkpoint", str(tmp / "run" / "model.ckpt"),
                 "--out", str(tmp / "ev_bad")])
    assert code == 2
    assert "config hash" in capsys.readouterr().err


def test_zero_step_checkpoint_round_trips(workspace, tmp_path):
    tmp, cfg_path = workspace
    out = tmp_path / "init"
    assert main(["train", "--config", str(cfg_path), "--steps", "0",
                 "--out", str(out)]) == 0
    first = (out / "model.ckpt").read_bytes()
    records, stored_hash = read_checkpoint(out / "model.ckpt")
    model = BarnetMini(num_classes=4, widths=(4, 6, 8, 10), n=4, seed=0)
    from barnetkit.checkpoint import load_checkpoint
    load_checkpoint(model, out / "model.ckpt")
    again = tmp_path / "again.ckpt"
    save_checkpoint(again, model.parameters(), model.buffers(), stored_hash)
    assert again.read_bytes() == first


def test_variant_flags_change_architecture(workspace, tmp_path):
    tmp, cfg_path = workspace
    out = tmp_path / "basic"
    assert main(["train", "--config", str(cfg_path), "--steps", "0",
                 "--no-bam", "--no-arf", "--out", str(out)]) == 0
    records, _ = read_checkpoint(out / "model.ckpt")
    assert not any(".gate." in name for name in records)


def test_gradcheck_exits_zero(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_bench_csv(tmp_path, capsys):
    assert main(["bench", "--repeats", "1", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "bench.csv").read_text().splitlines()
    assert rows[0] == "block,channels,height,width,forward_s,forward_backward_s"
    blocks = {row.split(",")[0] for row in rows[1:]}
    assert blocks == {"bam", "arf"}


def test_ablate_csv(workspace, tmp_path):
    tmp, cfg_path = workspace
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg_path), "--steps", "1",
                 "--runs", "1", "--out", str(out)]) == 0
    rows = (out / "ablate.csv").read_text().splitlines()
    assert len(rows) == 5
    assert rows[1].startswith("basic,0,0,")
    assert rows[4].startswith("full,1,1,")


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["train", "--learning-rate", "0.1"])
    assert err.value.code == 2


def test_missing_config_file(capsys, tmp_path):
    code = main(["train", "--config", str(tmp_path / "nope.cfg")])
    assert code == 2
    assert "no config file" in capsys.readouterr().err


def test_thread_env_var_changes_nothing(workspace, tmp_path, monkeypatch):
    tmp, cfg_path = workspace
    ckpt = str(tmp / "run" / "model.ckpt")
    monkeypatch.delenv("BARNETKIT_THREADS", raising=False)
    main(["eval", "--config", str(cfg_path), "--checkpoint", ckpt,
          "--out", str(tmp_path / "one")])
    monkeypatch.setenv("BARNETKIT_THREADS", "4")
    main(["eval", "--config", str(cfg_path), "--checkpoint", ckpt,
          "--out", str(tmp_path / "four")])
    assert (tmp_path / "one" / "report.csv").read_bytes() == \
           (tmp_path / "four" / "report.csv").read_bytes()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "barnetkit.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("gen-data", "train", "eval", "gradcheck", "ablate",
                 "bench"):
        assert name in proc.stdout
