import json
import time
from pathlib import Path

import pytest
import yaml

from habclass.runner import (
    ENV_DATA_ROOT,
    ENV_WEIGHTS_DIR,
    ConfigError,
    ExperimentConfig,
    RunError,
    SweepSpec,
    apply_env_overrides,
    load_config,
    load_run_result,
    parse_strategy_lr,
    run_experiment,
    run_sweep,
    save_config,
    timed_minutes,
)


def tiny_config(data_root, out_dir, **overrides) -> ExperimentConfig:
    base = dict(
        data_root=str(data_root),
        output_dir=str(out_dir),
        backbone="resnet18",
        strategy="fine_tune",
        total_epochs=1,
        learning_rates=[1e-3],
        batch_size=4,
        train_frac=0.5,
        val_frac=0.25,
        test_frac=0.25,
        split_seed=1,
        run_seed=2,
        pretrained=False,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_unknown_key_fatal(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({"data_root": "x", "output_dir": "y", "bach_size": 8}))
        with pytest.raises(ConfigError, match="bach_size"):
            load_config(path, env={})

    def test_round_trip(self, tmp_path):
        cfg = tiny_config("/data", "/out")
        path = tmp_path / "cfg.yaml"
        save_config(cfg, path)
        assert load_config(path, env={}) == cfg

    def test_validation(self):
        with pytest.raises(ConfigError, match="backbone"):
            tiny_config("/d", "/o", backbone="alexnet")
        with pytest.raises(ConfigError, match="strategy"):
            tiny_config("/d", "/o", strategy="probing")
        with pytest.raises(ConfigError, match="learning rate"):
            tiny_config("/d", "/o", strategy="combined")
        with pytest.raises(ConfigError, match="batch_size"):
            tiny_config("/d", "/o", batch_size=0)

    def test_hash_changes_on_any_field(self):
        base = tiny_config("/d", "/o")
        mutations = dict(
            data_root="/d2", output_dir="/o2", backbone="resnet50",
            strategy="linear_probe", total_epochs=2, learning_rates=[1e-4],
            batch_size=8, train_frac=0.6, val_frac=0.2, test_frac=0.2,
            split_seed=9, run_seed=9, pretrained=True,
            normalization_mean=[0.5, 0.5, 0.5], normalization_std=[0.5, 0.5, 0.5],
            weights_dir="/w", device="meta",
        )
        for field_name, new_value in mutations.items():
            d = base.to_dict()
            if field_name in ("train_frac", "val_frac", "test_frac"):
                d.update(train_frac=0.6, val_frac=0.2, test_frac=0.2)
            else:
                d[field_name] = new_value
            assert ExperimentConfig(**d).hash() != base.hash(), field_name

    def test_env_overrides(self):
        cfg = tiny_config("/from_config", "/o")
        env = {ENV_DATA_ROOT: "/from_env", ENV_WEIGHTS_DIR: "/weights_env"}
        cfg = apply_env_overrides(cfg, env)
        assert cfg.data_root == "/from_env"
        assert cfg.weights_dir == "/weights_env"


@pytest.fixture(scope="module")
def completed_run(tiny_tree, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(tiny_tree, out)
    return cfg, run_experiment(cfg), out


class TestRunExperiment:
    def test_smoke_artifacts(self, completed_run):
        _, result, out = completed_run
        for name in (
            "config.json", "manifest.tsv", "splits.tsv", "training_log.csv",
            "metrics.json", "confusion.csv", "result.json", "status.json",
            "checkpoints/best.pt", "checkpoints/last.pt",
        ):
            assert (out / name).exists(), name
        assert json.loads((out / "status.json").read_text())["state"] == "done"

    def test_test_set_hygiene(self, completed_run):
        _, result, _ = completed_run
        assert result.audit["test_reads_before_eval"] == 0
        # alpha 8 -> (4,2,2), beta 12 -> (6,3,3): 5 test images, read once each
        assert result.audit["test_reads_total"] == 5

    def test_metrics_from_test_split_only(self, completed_run):
        _, result, _ = completed_run
        assert result.confusion.total == result.audit["test_reads_total"]

    def test_reload_verifies_hash(self, completed_run):
        cfg, result, out = completed_run
        back = load_run_result(out)
        assert back.config_hash == result.config_hash
        assert back.report.accuracy == pytest.approx(result.report.accuracy)

    def test_corrupted_config_detected(self, completed_run, tmp_path):
        import shutil

        _, _, out = completed_run
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        stored = json.loads((copy / "config.json").read_text())
        stored["config"]["batch_size"] = 999
        (copy / "config.json").write_text(json.dumps(stored))
        with pytest.raises(ConfigError, match="hash mismatch"):
            load_run_result(copy)

    def test_rerun_identical(self, tiny_tree, tmp_path):
        outs = [tmp_path / "r1", tmp_path / "r2"]
        results = [
            run_experiment(tiny_config(tiny_tree, out, output_dir=str(out)))
            for out in outs
        ]
        assert (outs[0] / "splits.tsv").read_bytes() == (outs[1] / "splits.tsv").read_bytes()
        assert (
            results[0].log.records[0].train_loss
            == results[1].log.records[0].train_loss
        )

    def test_failed_stage_recorded(self, tmp_path):
        out = tmp_path / "bad_run"
        cfg = tiny_config(tmp_path / "missing_data", out)
        with pytest.raises(RunError, match="ingest"):
            run_experiment(cfg)
        status = json.loads((out / "status.json").read_text())
        assert status == {
            "stage": "ingest", "state": "failed",
            "error": status["error"],
        }
        assert "not a directory" in status["error"]


class TestSweep:
    def test_axis_validation(self):
        cfg = tiny_config("/d", "/o")
        with pytest.raises(ConfigError, match="axis"):
            SweepSpec(cfg, "epochs", [1, 2])
        with pytest.raises(ConfigError, match="non-empty"):
            SweepSpec(cfg, "batch_size", [])

    def test_parse_strategy_lr(self):
        assert parse_strategy_lr("fine_tune:0.0001") == ("fine_tune", [0.0001])
        assert parse_strategy_lr("combined:0.001,0.0001") == ("combined", [0.001, 0.0001])
        with pytest.raises(ConfigError):
            parse_strategy_lr("fine_tune")

    def test_singleton_matches_single_run(self, tiny_tree, tmp_path):
        base = tiny_config(tiny_tree, tmp_path / "unused")
        rows = run_sweep(SweepSpec(base, "batch_size", [4]), tmp_path / "sweep")
        single = run_experiment(tiny_config(tiny_tree, tmp_path / "single"))
        assert len(rows) == 1
        assert rows[0]["status"] == "ok"
        assert rows[0]["test_accuracy"] == pytest.approx(single.report.accuracy)
        assert rows[0]["best_val_accuracy"] == pytest.approx(single.best.val_accuracy)

    def test_continue_on_error_and_isolation(self, tiny_tree, tmp_path):
        base = tiny_config(tiny_tree, tmp_path / "unused")
        rows = run_sweep(
            SweepSpec(base, "backbone", ["resnet18", "no_such_net", "resnet18x"]),
            tmp_path / "sweep",
        )
        statuses = {r["value"]: r["status"] for r in rows}
        assert statuses["resnet18"] == "ok"
        assert statuses["no_such_net"] == "failed"
        assert (tmp_path / "sweep" / "sweep_summary.json").exists()

    def test_split_files_shared_byte_exact(self, tiny_tree, tmp_path):
        base = tiny_config(tiny_tree, tmp_path / "unused")
        rows = run_sweep(SweepSpec(base, "batch_size", [4, 8]), tmp_path / "sweep")
        split_files = [
            Path(r["run_dir"]) / "splits.tsv" for r in rows if r["status"] == "ok"
        ]
        assert len(split_files) == 2
        assert split_files[0].read_bytes() == split_files[1].read_bytes()

    def test_batch_axis_sorted(self, tmp_path, tiny_tree):
        base = tiny_config(tiny_tree, tmp_path / "unused")
        calls = []

        def fake_run(cfg):
            calls.append(cfg.batch_size)
            raise RuntimeError("stub")

        run_sweep(SweepSpec(base, "batch_size", [16, 4, 8]), tmp_path / "s", run_fn=fake_run)
        assert calls == [4, 8, 16]


class TestTiming:
    def test_unit_conversion(self):
        _, minutes = timed_minutes(lambda: None)
        assert minutes >= 0

    def test_sleep_stub_within_tolerance(self):
        _, minutes = timed_minutes(time.sleep, 1.2)
        assert minutes == pytest.approx(1.2 / 60.0, abs=0.05)
