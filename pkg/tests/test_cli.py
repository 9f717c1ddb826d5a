import json

import pytest

from mmpms.cli import run
from mmpms.trainer import load_checkpoint

TINY_FLAGS = ["--hidden-size", "8", "--embed-size", "6", "--K", "3", "--epochs", "2", "--batch-size", "8",
              "--seed", "5", "--max-len", "12"]


def _stderr_json(err: str) -> list[dict]:
    return [json.loads(line) for line in err.splitlines() if line.strip()]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["synth-data", "--posts", "30", "--modes", "4", "--seed", "1", "--out", str(d / "train.tsv")]) == 0
    assert run(["synth-data", "--posts", "6", "--modes", "4", "--seed", "2", "--out", str(d / "test.tsv")]) == 0
    assert run(["build-vocab", "--corpus", str(d / "train.tsv"), "--max-size", "60", "--out", str(d / "vocab.txt")]) == 0
    code = run(["train", "--corpus", str(d / "train.tsv"), "--vocab", str(d / "vocab.txt"),
                "--metrics", str(d / "metrics.jsonl"), "--out", str(d / "a.ckpt")] + TINY_FLAGS)
    assert code == 0
    return d


def test_synth_and_vocab_outputs(workdir, capsys):
    lines = (workdir / "train.tsv").read_text().splitlines()
    assert len(lines) == 30 * 4
    assert run(["build-vocab", "--corpus", str(workdir / "train.tsv"), "--max-size", "60",
                "--out", str(workdir / "v2.txt")]) == 0
    out, err = capsys.readouterr()
    assert json.loads(out)["vocab_size"] > 4
    echoed = _stderr_json(err)[0]
    assert echoed["command"] == "build-vocab" and echoed["config"]["max_size"] == 60


def test_train_is_deterministic(workdir):
    code = run(["train", "--corpus", str(workdir / "train.tsv"), "--vocab", str(workdir / "vocab.txt"),
                "--out", str(workdir / "b.ckpt")] + TINY_FLAGS)
    assert code == 0
    assert (workdir / "a.ckpt").read_bytes() == (workdir / "b.ckpt").read_bytes()
    records = [json.loads(l) for l in (workdir / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2]


def test_config_file_with_flag_override(workdir, capsys):
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"hidden_size": 8, "embed_size": 6, "K": 2, "epochs": 1, "batch_size": 8, "seed": 1}))
    code = run(["train", "--config", str(cfg), "--K", "3", "--corpus", str(workdir / "train.tsv"),
                "--out", str(workdir / "c.ckpt")])
    assert code == 0
    echoed = _stderr_json(capsys.readouterr().err)[0]
    assert echoed["config"]["K"] == 3 and echoed["config"]["hidden_size"] == 8
    params, config, vocab = load_checkpoint(workdir / "c.ckpt")
    assert params.num_mappings == 3 and vocab is not None


def test_generate_all_prints_k_lines(workdir, capsys):
    code = run(["generate", "--ckpt", str(workdir / "a.ckpt"), "--post", "w1 w2 w3", "--mapping", "all",
                "--max-len", "6"])
    assert code == 0
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_generate_single_mapping(workdir, capsys):
    assert run(["generate", "--ckpt", str(workdir / "a.ckpt"), "--post", "w1 w2", "--mapping", "1"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1
    assert run(["generate", "--ckpt", str(workdir / "a.ckpt"), "--post", "w1 w2", "--seed", "4"]) == 0


def test_eval_report(workdir, capsys):
    args = ["eval", "--ckpt", str(workdir / "a.ckpt"), "--corpus", str(workdir / "test.tsv"), "--multi"]
    assert run(args) == 0
    report = json.loads(capsys.readouterr().out)
    for key in ("bleu1", "bleu2", "dist1", "dist2"):
        assert 0.0 <= report[key] <= 1.0
    assert report["responses_per_post"] == 3
    assert run(args + ["--workers", "2"]) == 0
    assert json.loads(capsys.readouterr().out) == report


def test_inspect_exports(workdir, capsys):
    export = workdir / "reps.tsv"
    code = run(["inspect", "--ckpt", str(workdir / "a.ckpt"), "--corpus", str(workdir / "test.tsv"),
                "--min-count", "1", "--export", str(export)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert sum(out["selection_stats"]["usage"]) == 6 * 4
    assert len(out["mapping_keywords"]) == 3
    assert out["exported_records"] == 6 * 3 == len(export.read_text().splitlines())


def test_grad_check_command(tmp_path, capsys):
    cfg = tmp_path / "gc.json"
    cfg.write_text(json.dumps({"hidden_size": 3, "embed_size": 3, "K": 2, "vocab_max": 12, "batch_size": 2,
                               "max_len": 4}))
    assert run(["grad-check", "--config", str(cfg)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and set(report["parts"]) == {"total", "L_G", "L_M"}


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["synth-data", "--posts", "3"],
    ["synth-data", "--posts", "3", "--modes", "4", "--out", "x", "--bogus", "1"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv) == 1
    err = _stderr_json(capsys.readouterr().err)
    assert len(err) == 1 and err[0]["error"] == "usage"


def test_bad_mapping_is_usage_error(workdir, capsys):
    assert run(["generate", "--ckpt", str(workdir / "a.ckpt"), "--post", "w1", "--mapping", "9"]) == 1
    assert _stderr_json(capsys.readouterr().err)[-1]["error"] == "usage"


def test_runtime_errors_exit_two(workdir, tmp_path, capsys):
    assert run(["generate", "--ckpt", str(tmp_path / "missing.ckpt"), "--post", "w1"]) == 2
    err = _stderr_json(capsys.readouterr().err)
    assert err[-1]["error"] == "FileNotFoundError"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert run(["eval", "--ckpt", str(bad), "--corpus", str(workdir / "test.tsv")]) == 2
    assert run(["train", "--corpus", str(workdir / "train.tsv"), "--out", str(tmp_path / "x"), "--tau", "-1"]) == 2


def test_module_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "mmpms", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "grad-check" in proc.stdout
