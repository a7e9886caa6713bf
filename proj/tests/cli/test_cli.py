# SPDX-License-Identifier: Apache-2.0
import json
import os
import subprocess

import pytest

XMC = os.environ.get("XMC_BIN", "xmc")


def run(*args, cwd=None, env=None):
    return subprocess.run([XMC, *map(str, args)], capture_output=True, text=True, cwd=cwd, env=env)


def json_tail(stdout):
    return json.loads(stdout[stdout.index("{"):])


def test_memest_renee_amazon3m(tmp_path):
    r = run("memest", "--labels", 2812281, "--dim", 768, "--batch", 128, "--recipe", "renee", "-o", tmp_path)
    assert r.returncode == 0, r.stderr
    summary = json_tail(r.stdout)
    assert summary["recipe"] == "renee"
    assert abs(summary["peak_gib"] - 39.7) <= 0.05 * 39.7
    header = r.stdout.splitlines()[0]
    assert header == "phase,allocation,bytes,live_total"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "memest"
    assert manifest["config"]["labels"] == 2812281
    assert "version" in manifest and "seed" in manifest
    assert (tmp_path / "timeline.csv").exists()


@pytest.mark.parametrize("recipe,target", [("elmo_bf16", 10.39), ("elmo_fp8", 6.6)])
def test_memest_elmo(tmp_path, recipe, target):
    r = run("memest", "--labels", 2812281, "--recipe", recipe, "-o", tmp_path)
    assert r.returncode == 0, r.stderr
    assert abs(json_tail(r.stdout)["peak_gib"] - target) <= 0.05 * target


def test_memest_zero_labels_is_config_error(tmp_path):
    r = run("memest", "--labels", 0, "--dim", 768, "-o", tmp_path)
    assert r.returncode == 2
    assert "labels must be positive" in r.stderr


def test_unknown_flag_rejected(tmp_path):
    r = run("memest", "--labels", 10, "--bogus", 1, "-o", tmp_path)
    assert r.returncode == 2


def test_bad_value_names_flag(tmp_path):
    r = run("memest", "--labels", 10, "--recipe", "sgd", "-o", tmp_path)
    assert r.returncode == 2
    assert "--recipe" in r.stderr


def test_memsweep_csv(tmp_path):
    r = run("memsweep", "--labels", "1000,2812281", "-o", tmp_path)
    assert r.returncode == 0, r.stderr
    lines = r.stdout.strip().splitlines()
    assert lines[0] == "labels,recipe,peak_gib,classifier_peak_gib"
    assert len(lines) == 1 + 2 * 3


def test_gen_synth_is_deterministic(tmp_path):
    for name in ("a.txt", "b.txt"):
        r = run("gen-synth", "--seed", 7, "--samples", 200, "--out", tmp_path / name, "-o", tmp_path / "out")
        assert r.returncode == 0, r.stderr
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    r = run("gen-synth", "--seed", 7, "--samples", 200, "--out", tmp_path / "c.txt.gz", "-o", tmp_path / "out")
    assert r.returncode == 0


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "data.txt"
    r = run("gen-synth", "--seed", 3, "--samples", 300, "--labels", 32, "--min-labels", 1, "--out", path,
            "-o", tmp_path / "gen")
    assert r.returncode == 0, r.stderr
    return path


def test_train_eval_and_replay(tmp_path, dataset):
    out = tmp_path / "run"
    r = run("train", "--data", dataset, "--epochs", 2, "--head-format", "e4m3", "--chunks", 4, "-o", out)
    assert r.returncode == 0, r.stderr
    history = [json.loads(line) for line in (out / "history.jsonl").read_text().splitlines()]
    assert [h["epoch"] for h in history] == [1, 2]
    for name in ("head.ckpt", "encoder.bin", "trainer.json"):
        assert (out / "checkpoint" / name).exists()
    assert json.loads((out / "memory.json").read_text())["peak_bytes"] > 0

    replay = tmp_path / "replay"
    r = run("--config", out / "config.toml", "train", "-o", replay)
    assert r.returncode == 0, r.stderr
    assert (out / "checkpoint" / "head.ckpt").read_bytes() == (replay / "checkpoint" / "head.ckpt").read_bytes()

    r = run("eval", "--data", dataset, "--checkpoint", out / "checkpoint", "-o", tmp_path / "eval")
    assert r.returncode == 0, r.stderr
    metrics = json.loads((tmp_path / "eval" / "eval.json").read_text())
    assert {m["metric"] for m in metrics} == {"P", "PSP"}


def test_flag_overrides_config_file(tmp_path, dataset):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'train.data="{dataset}"\ntrain.epochs=3\n')
    r = run("--config", cfg, "train", "--epochs", 1, "-o", tmp_path / "run")
    assert r.returncode == 0, r.stderr
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["config"]["epochs"] == 1


def test_output_dir_from_environment(tmp_path):
    env = dict(os.environ, XMC_OUTPUT_DIR=str(tmp_path / "envout"))
    r = run("memest", "--labels", 100, env=env)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "envout" / "manifest.json").exists()


def test_train_config_errors(tmp_path, dataset):
    r = run("train", "--data", dataset, "--dropout", 1.5, "-o", tmp_path)
    assert r.returncode == 2 and "--dropout" in r.stderr
    r = run("train", "--data", tmp_path / "missing.txt", "-o", tmp_path)
    assert r.returncode == 2 and "--data" in r.stderr
    r = run("train", "--data", dataset, "--head-format", "e9m2", "-o", tmp_path)
    assert r.returncode == 2 and "--head-format" in r.stderr


def test_runtime_failure_exit_code(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("2 3 4\n0 1:0.5\n")
    r = run("train", "--data", bad, "-o", tmp_path)
    assert r.returncode == 1


def test_histprobe_writes_three_files(tmp_path, dataset):
    out = tmp_path / "hist"
    r = run("histprobe", "--data", dataset, "--steps", "1,3", "--epochs", 1, "--head-format", "e4m3", "-o", out)
    assert r.returncode == 0, r.stderr
    for family in ("logit_gradients", "weights", "inputs"):
        probes = json.loads((out / f"hist_{family}.json").read_text())
        assert [p["step"] for p in probes] == [1, 3]
        h = probes[0]["histogram"]
        if h["total"] > h["zeros"]:
            total = h["underflow_fraction"] + h["in_range_fraction"] + h["overflow_fraction"]
            assert abs(total - 1.0) < 1e-9
    weights = json.loads((out / "hist_weights.json").read_text())
    assert all(p["histogram"]["overflow"] == 0 for p in weights)


def test_quantsweep_small_grid(tmp_path, dataset):
    r = run("quantsweep", "--data", dataset, "--epochs", 1, "--exp-bits", "3", "--man-bits", "2",
            "--extra-formats", "fp32", "-o", tmp_path)
    assert r.returncode == 0, r.stderr
    lines = r.stdout.strip().splitlines()
    assert lines[0].startswith("format,")
    assert len(lines) == 3


def test_help_lists_units():
    r = run("train", "--help")
    assert r.returncode == 0
    for unit in ("(steps)", "(probability)", "(count)"):
        assert unit in r.stdout
    r = run("memest", "--help")
    assert "GiB" in r.stdout
