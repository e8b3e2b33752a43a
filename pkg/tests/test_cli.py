"""Command-line interface: artifacts, exit codes, config precedence, determinism."""

import json
import subprocess
import sys

import pytest

BASE_CONFIG = """
# small experiment for fast tests
n_samples = 240
feature_dim = 6
trunk_dims = 12,12,12
branch_dim = 6
max_epochs = 2
"""


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "multirater", *map(str, args)],
        capture_output=True,
        text=True,
    )


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(BASE_CONFIG)
    return path


@pytest.fixture()
def generated(tmp_path, config_file):
    out = tmp_path / "data"
    result = run_cli("generate", "--config", config_file, "--seed", 5, "--out", out)
    assert result.returncode == 0, result.stderr
    return out


class TestGenerate:
    def test_writes_csvs_and_manifest(self, generated):
        names = sorted(p.name for p in generated.iterdir())
        assert names == ["manifest.json", "test.csv", "train.csv", "val.csv"]
        manifest = json.loads((generated / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert manifest["config"]["n_samples"] == 240
        assert sum(manifest["counts"]["overall"].values()) == 240
        assert manifest["sizes"] == {"train": 144, "val": 36, "test": 60}

    def test_zero_samples_is_a_usage_error(self, tmp_path):
        result = run_cli("generate", "--n", 0, "--out", tmp_path / "x")
        assert result.returncode == 2
        assert "n_samples" in result.stderr

    def test_same_seed_twice_is_byte_identical(self, tmp_path, config_file):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli("generate", "--config", config_file, "--seed", 9, "--out", out).returncode == 0
            outs.append(out)
        for fname in ("train.csv", "val.csv", "test.csv", "manifest.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_cli_flag_overrides_config_file(self, tmp_path, config_file):
        out = tmp_path / "d"
        assert run_cli("generate", "--config", config_file, "--n", 100, "--out", out).returncode == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["n_samples"] == 100

    def test_unknown_config_key_is_a_usage_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense_key = 3\n")
        result = run_cli("generate", "--config", cfg, "--out", tmp_path / "x")
        assert result.returncode == 2
        assert "nonsense_key" in result.stderr


class TestTrain:
    def test_writes_checkpoint_log_and_snapshot(self, tmp_path, config_file, generated):
        out = tmp_path / "run"
        result = run_cli("train", "--config", config_file, "--seed", 5,
                         "--data", generated, "--out", out)
        assert result.returncode == 0, result.stderr
        assert (out / "checkpoint.json").is_file()
        assert (out / "config_resolved.json").is_file()
        log_lines = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2
        for line in log_lines:
            record = json.loads(line)
            assert set(record) == {
                "epoch", "lr", "loss_sen", "loss_spec", "loss_fusion", "loss_consensus", "val_auc",
            }
        checkpoint = json.loads((out / "checkpoint.json").read_text())
        assert checkpoint["metadata"]["seed"] == 5

    def test_baseline_ablation_trains_single_branch(self, tmp_path, config_file, generated):
        out = tmp_path / "base"
        result = run_cli("train", "--config", config_file, "--data", generated,
                         "--out", out, "--ablation", "baseline", "--epochs", 1)
        assert result.returncode == 0, result.stderr
        checkpoint = json.loads((out / "checkpoint.json").read_text())
        assert checkpoint["model"]["multi_branch"] is False
        names = {t["name"] for t in checkpoint["tensors"]}
        assert "sen.head.W" not in names

    def test_missing_data_dir_fails_with_runtime_error(self, tmp_path, config_file):
        result = run_cli("train", "--config", config_file,
                         "--data", tmp_path / "nope", "--out", tmp_path / "r")
        assert result.returncode == 1
        assert "missing dataset file" in result.stderr


@pytest.fixture()
def trained(tmp_path, config_file, generated):
    out = tmp_path / "trained"
    result = run_cli("train", "--config", config_file, "--seed", 5, "--data", generated, "--out", out)
    assert result.returncode == 0, result.stderr
    return out


class TestEval:
    def test_writes_reports(self, tmp_path, config_file, generated, trained):
        out = tmp_path / "eval"
        result = run_cli("eval", "--config", config_file,
                         "--checkpoint", trained / "checkpoint.json",
                         "--data", generated / "test.csv", "--out", out)
        assert result.returncode == 0, result.stderr
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["report"]["metrics"]) == {"sen", "spec", "fusion"}
        assert "FusionBr" in (out / "report.txt").read_text()
        assert "FusionBr" in result.stdout

    def test_idempotent(self, tmp_path, config_file, generated, trained):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            result = run_cli("eval", "--config", config_file,
                             "--checkpoint", trained / "checkpoint.json",
                             "--data", generated / "test.csv", "--out", out)
            assert result.returncode == 0
            outs.append(out)
        assert (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()
        assert (outs[0] / "report.txt").read_bytes() == (outs[1] / "report.txt").read_bytes()

    def test_empty_dataset_is_a_usage_error(self, tmp_path, config_file, trained):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        result = run_cli("eval", "--config", config_file,
                         "--checkpoint", trained / "checkpoint.json",
                         "--data", empty, "--out", tmp_path / "e")
        assert result.returncode == 2

    def test_feature_dim_mismatch_fails(self, tmp_path, config_file, generated, trained):
        other_cfg = tmp_path / "wide.cfg"
        other_cfg.write_text(BASE_CONFIG.replace("feature_dim = 6", "feature_dim = 9"))
        wide = tmp_path / "wide-data"
        assert run_cli("generate", "--config", other_cfg, "--out", wide).returncode == 0
        result = run_cli("eval", "--config", config_file,
                         "--checkpoint", trained / "checkpoint.json",
                         "--data", wide / "test.csv", "--out", tmp_path / "m")
        assert result.returncode == 1
        assert "features" in result.stderr


class TestAblation:
    def test_small_grid_has_all_arms_in_order(self, tmp_path, config_file):
        out = tmp_path / "grid"
        result = run_cli("ablation", "--config", config_file, "--seeds", 2,
                         "--n", 200, "--epochs", 1, "--out", out)
        assert result.returncode == 0, result.stderr
        grid = json.loads((out / "ablation_grid.json").read_text())
        assert grid["row_order"] == ["baseline", "multibr", "conloss", "uncerty", "full"]
        for arm, row in grid["arms"].items():
            assert not row["failed"], (arm, row["errors"])
            assert row["seeds"] == [grid["seed"], grid["seed"] + 1]
            assert len(row["per_seed"]["f1"]) == 2
            assert set(row["mean"]) == {"acc", "sen", "spec", "f1", "auc"}
        table = (out / "ablation_grid.txt").read_text()
        assert table.splitlines()[2].startswith("baseline")


class TestPipelineDeterminism:
    def test_generate_train_eval_is_bit_identical_across_reruns(self, tmp_path, config_file):
        digests = []
        for name in ("p1", "p2"):
            root = tmp_path / name
            data, run, ev = root / "data", root / "run", root / "eval"
            assert run_cli("generate", "--config", config_file, "--seed", 3, "--out", data).returncode == 0
            assert run_cli("train", "--config", config_file, "--seed", 3,
                           "--data", data, "--out", run).returncode == 0
            assert run_cli("eval", "--config", config_file, "--seed", 3,
                           "--checkpoint", run / "checkpoint.json",
                           "--data", data / "test.csv", "--out", ev).returncode == 0
            digests.append({
                path.relative_to(root): path.read_bytes()
                for path in sorted(root.rglob("*"))
                if path.is_file()
            })
        assert digests[0].keys() == digests[1].keys()
        for key in digests[0]:
            assert digests[0][key] == digests[1][key], f"artifact differs: {key}"


class TestUsage:
    def test_missing_subcommand_is_usage_error(self):
        assert run_cli().returncode == 2

    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert run_cli("generate", "--out", tmp_path, "--bogus").returncode == 2
