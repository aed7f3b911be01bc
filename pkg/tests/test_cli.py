import json
import math

import numpy as np
import pytest

from blenda.cli import ablation_rows, main
from blenda.config import RunConfig, load_config
from blenda.imaging import read_image


TINY = {
    "dataset": {
        "image_size": 16,
        "min_objects": 1,
        "max_objects": 3,
        "num_source": 3,
        "num_target": 3,
    },
    "model": {"feature_dim": 8, "disc_hidden": 4},
    "schedule": {"alpha": 6.0, "beta": 0.95, "total_iterations": 4},
    "train": {"pretrain_iterations": 2, "epochs": 1, "seed": 0},
    "ablation": {"seeds": 2, "static_deltas": [0.7]},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


def run_cli(*argv):
    return main(list(argv))


class TestScheduleCommand:
    def test_writes_curve_with_expected_endpoints(self, tiny_config, tmp_path):
        code = run_cli(
            "schedule", "--config", str(tiny_config),
            "--out", str(tmp_path / "runs"), "--run-name", "sched",
        )
        assert code == 0
        lines = (tmp_path / "runs/sched/schedule_curve.csv").read_text().splitlines()
        assert lines[0] == "gamma,delta"
        first = [float(t) for t in lines[1].split(",")]
        last = [float(t) for t in lines[-1].split(",")]
        assert first == [0.0, 0.0]
        assert last[0] == 1.0
        assert last[1] == pytest.approx(0.95 * math.tanh(3.0), rel=1e-12)


class TestGenerateAndBlend:
    def test_generate_then_blend_delta_zero_is_source(self, tiny_config, tmp_path):
        runs = tmp_path / "runs"
        assert run_cli("generate", "--config", str(tiny_config),
                       "--out", str(runs), "--run-name", "gen") == 0
        root = runs / "gen/dataset"
        cfg_path = tmp_path / "cfg2.json"
        payload = dict(TINY)
        payload["paths"] = {"dataset_root": str(root)}
        cfg_path.write_text(json.dumps(payload))

        assert run_cli("blend", "--config", str(cfg_path), "--delta", "0.0",
                       "--out", str(runs), "--run-name", "blend0") == 0
        sources = sorted(
            p for p in (root / "train").glob("scene_*.png")
            if ".translated" not in p.name and ".blended" not in p.name
        )
        assert sources
        for src in sources:
            blended = src.with_name(src.stem + ".blended.png")
            assert blended.read_bytes() == src.read_bytes()
        assert (runs / "blend0/blended_manifest.jsonl").exists()

    def test_blend_requires_delta(self, tiny_config, tmp_path, capsys):
        code = run_cli("blend", "--config", str(tiny_config),
                       "--out", str(tmp_path / "runs"))
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEvalPipeline:
    def test_pretrain_finetune_eval(self, tiny_config, tmp_path):
        runs = tmp_path / "runs"
        assert run_cli("generate", "--config", str(tiny_config),
                       "--out", str(runs), "--run-name", "gen") == 0
        cfg_path = tmp_path / "cfg2.json"
        payload = dict(TINY)
        payload["paths"] = {"dataset_root": str(runs / "gen/dataset")}
        cfg_path.write_text(json.dumps(payload))

        assert run_cli("pretrain", "--config", str(cfg_path),
                       "--out", str(runs), "--run-name", "pre") == 0
        ckpt = runs / "pre/pretrain.ckpt"
        assert ckpt.exists()
        assert (runs / "pre/metrics.csv").exists()

        assert run_cli("finetune", "--config", str(cfg_path),
                       "--checkpoint", str(ckpt),
                       "--out", str(runs), "--run-name", "fin") == 0
        fin_ckpt = runs / "fin/finetune.ckpt"
        assert fin_ckpt.exists()

        assert run_cli("eval", "--config", str(cfg_path),
                       "--checkpoint", str(fin_ckpt),
                       "--out", str(runs), "--run-name", "ev") == 0
        payload = json.loads((runs / "ev/eval.json").read_text())
        assert 0.0 <= payload["map"] <= 1.0
        assert len(payload["ap"]) == 3

    def test_finetune_requires_checkpoint(self, tiny_config, tmp_path, capsys):
        runs = tmp_path / "runs"
        assert run_cli("generate", "--config", str(tiny_config),
                       "--out", str(runs), "--run-name", "gen") == 0
        cfg_path = tmp_path / "cfg2.json"
        payload = dict(TINY)
        payload["paths"] = {"dataset_root": str(runs / "gen/dataset")}
        cfg_path.write_text(json.dumps(payload))
        assert run_cli("finetune", "--config", str(cfg_path),
                       "--out", str(runs)) == 1
        assert "checkpoint" in capsys.readouterr().err


class TestAblate:
    def test_summary_rows_and_medians(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("BLENDA_WORKERS", "1")
        runs = tmp_path / "runs"
        assert run_cli("ablate", "--config", str(tiny_config),
                       "--out", str(runs), "--run-name", "abl") == 0
        lines = (runs / "abl/ablation_summary.csv").read_text().splitlines()
        assert lines[0] == "config,mode,seed_0,seed_1,median"
        # source_only + (static_0.7, dynamic) x (hard, mixed)
        names = [tuple(l.split(",")[:2]) for l in lines[1:]]
        assert names[0] == ("source_only", "-")
        assert set(names[1:]) == {
            ("static_0.7", "hard"), ("static_0.7", "mixed"),
            ("dynamic", "hard"), ("dynamic", "mixed"),
        }
        for line in lines[1:]:
            cells = line.split(",")
            values = [float(v) for v in cells[2:]]
            assert values[-1] == pytest.approx(float(np.median(values[:-1])))

    def test_byte_identical_reruns(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("BLENDA_WORKERS", "1")
        runs = tmp_path / "runs"
        for name in ("a", "b"):
            assert run_cli("ablate", "--config", str(tiny_config),
                           "--out", str(runs), "--run-name", name) == 0
        summary_a = (runs / "a/ablation_summary.csv").read_bytes()
        summary_b = (runs / "b/ablation_summary.csv").read_bytes()
        assert summary_a == summary_b
        metrics_a = sorted((runs / "a").rglob("metrics.csv"))
        assert metrics_a
        for path in metrics_a:
            twin = runs / "b" / path.relative_to(runs / "a")
            assert path.read_bytes() == twin.read_bytes()

    def test_default_row_grid_has_eight_entries(self):
        assert len(ablation_rows(RunConfig())) == 8


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"learning_rate": 1}}))
        assert run_cli("schedule", "--config", str(bad),
                       "--out", str(tmp_path / "runs")) == 1
        err = capsys.readouterr().err
        assert "error:" in err and "learning_rate" in err

    def test_resolved_config_is_reloadable(self, tiny_config, tmp_path):
        runs = tmp_path / "runs"
        assert run_cli("schedule", "--config", str(tiny_config),
                       "--out", str(runs), "--run-name", "s",
                       "--seed", "3") == 0
        echoed = load_config(runs / "s/config.resolved.json")
        assert echoed.train.seed == 3
        assert echoed.schedule.total_iterations == 4
        assert echoed.model_section.feature_dim == 8

    def test_defaults_need_no_config(self, tmp_path):
        assert run_cli("schedule", "--out", str(tmp_path / "runs"),
                       "--run-name", "s") == 0
        assert (tmp_path / "runs/s/schedule_curve.csv").exists()
