import json
import subprocess
import sys

import pytest

from dfadkd.cli import main, read_metrics

TINY = {"n_train": 200, "n_test": 60, "image_size": 8, "teacher_epochs": 2, "teacher_width": 4,
        "student_width": 2, "depth": 2, "generator_channels": [8, 4, 4, 4], "latent_dim": 8,
        "batch_size": 8, "warmup_epochs": 1, "epochs": 2, "batches_per_epoch": 2, "qat_epochs": 1,
        "calib_batches": 1}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["gen-data", "--config", str(cfg), "--out-dir", str(root / "data")]) == 0
    assert main(["train-teacher", "--config", str(cfg), "--out-dir", str(root / "teacher"),
                 "--override", f"data_dir={root / 'data' / 'data'}"]) == 0
    # everything after teacher training runs without the training split on disk
    (root / "data" / "data" / "train.npz").unlink()
    return root, cfg


def common(root):
    return ["--override", f"data_dir={root / 'data' / 'data'}",
            "--override", f"teacher_path={root / 'teacher' / 'teacher.ckpt'}"]


def test_every_run_writes_resolved_config_and_metrics(workspace):
    root, _ = workspace
    for sub in ("data", "teacher"):
        assert (root / sub / "config.resolved").exists()
        records = read_metrics(root / sub / "metrics.jsonl")
        assert [r["epoch"] for r in records] == list(range(len(records)))
    assert (root / "teacher" / "teacher.ckpt").exists()


def test_distill_is_deterministic_and_data_free(workspace):
    root, cfg = workspace
    outs = []
    for k in range(2):
        out = root / f"distill{k}"
        assert main(["distill", "--config", str(cfg), "--seed", "7", "--out-dir", str(out)] + common(root)) == 0
        outs.append(out)
    assert (outs[0] / "metrics.jsonl").read_bytes() == (outs[1] / "metrics.jsonl").read_bytes()
    assert (outs[0] / "student_0.ckpt").read_bytes() == (outs[1] / "student_0.ckpt").read_bytes()
    records = read_metrics(outs[0] / "metrics.jsonl")
    assert [r["phase"] for r in records] == ["warmup", "main", "main"]
    assert json.loads((outs[0] / "config.resolved").read_text())["seed"] == 7


def test_pipeline_eval_matches_recorded_accuracy(workspace):
    root, cfg = workspace
    assert main(["warmup-gen", "--config", str(cfg), "--out-dir", str(root / "warm")] + common(root)) == 0
    gen = ["--override", f"generator_path={root / 'warm' / 'generator_0.ckpt'}"]
    assert main(["qat-distill", "--config", str(cfg), "--out-dir", str(root / "qat")] + common(root) + gen) == 0
    recorded = read_metrics(root / "qat" / "metrics.jsonl")[-1]["test_acc"][0]
    assert main(["eval", "--config", str(cfg), "--out-dir", str(root / "eval"), "--override",
                 f"eval_checkpoint={root / 'qat' / 'qat_student.ckpt'}"] + common(root)) == 0
    assert read_metrics(root / "eval" / "metrics.jsonl")[0]["test_acc"] == recorded

    assert main(["quantize", "--config", str(cfg), "--out-dir", str(root / "q")] + common(root) + gen) == 0
    q = read_metrics(root / "q" / "metrics.jsonl")[0]
    assert main(["eval", "--config", str(cfg), "--out-dir", str(root / "eval_q"), "--override",
                 f"eval_checkpoint={root / 'q' / 'quantized.ckpt'}"] + common(root)) == 0
    assert read_metrics(root / "eval_q" / "metrics.jsonl")[0]["test_acc"] == q["test_acc"]

    assert main(["dump-samples", "--config", str(cfg), "--out-dir", str(root / "samples")]
                + common(root) + gen) == 0
    assert (root / "samples" / "samples.ppm").read_bytes().startswith(b"P6\n")


def test_unknown_subcommand_and_flag(capsys):
    assert main(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main(["eval", "--bogus"]) != 0


def test_missing_config_names_path(capsys, tmp_path):
    missing = tmp_path / "absent.json"
    assert main(["eval", "--config", str(missing), "--out-dir", str(tmp_path / "o")]) != 0
    assert str(missing) in capsys.readouterr().err


def test_invalid_config_lists_keys(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"alhpa": 1, "epochs": "x"}))
    assert main(["distill", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) != 0
    assert "alhpa" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dfadkd", "nope"], capture_output=True, text=True)
    assert proc.returncode != 0 and "usage" in proc.stderr
