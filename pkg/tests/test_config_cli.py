"""Config validation and the command-line surface."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rankloop.config import load_config, parse_override, write_config
from rankloop.exceptions import ConfigError


class TestConfig:
    def test_defaults_validate(self):
        cfg = load_config({})
        assert cfg.stages == 3 and cfg.select_k == 16
        assert cfg.enhancer.ranker_weight == 0.1
        assert cfg.ranker.margin == 0.5
        assert cfg.annotators.count == 3

    def test_unknown_keys_all_reported(self):
        with pytest.raises(ConfigError) as err:
            load_config({"stagez": 3, "enhancer": {"lr": 1, "iterations": 4},
                         "ranker": {"blocs": 2}})
        message = str(err.value)
        assert "stagez" in message
        assert "enhancer.lr" in message
        assert "ranker.blocs" in message

    def test_type_errors_reported(self):
        with pytest.raises(ConfigError, match="stages"):
            load_config({"stages": "three"})

    def test_bounds_checked(self):
        with pytest.raises(ConfigError, match="annotators.count"):
            load_config({"annotators": {"count": 2}})
        with pytest.raises(ConfigError, match="vote_source"):
            load_config({"vote_source": "email"})

    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"stages": 4, "enhancer": {"grid_size": 2}}))
        cfg = load_config(path, overrides=["stages=7", "enhancer.grid_size=3",
                                           "vote_source=simulated"])
        assert cfg.stages == 7
        assert cfg.enhancer.grid_size == 3

    def test_parse_override_json_values(self):
        assert parse_override("ranker.lr=0.001") == ("ranker.lr", 0.001)
        assert parse_override("x_dir=/data/x") == ("x_dir", "/data/x")
        assert parse_override("ranker.warm_start=false") == ("ranker.warm_start", False)

    def test_round_trip_through_file(self, tmp_path):
        cfg = load_config({"stages": 5, "seed": 9})
        write_config(cfg, tmp_path / "out.json")
        back = load_config(tmp_path / "out.json")
        assert back.to_dict() == cfg.to_dict()


def _run_cli(*args):
    return subprocess.run([sys.executable, "-m", "rankloop.cli", *args],
                          capture_output=True, text=True)


class TestCli:
    def test_unknown_config_key_exit_2_and_named(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"workdirr": "x"}))
        proc = _run_cli("run-all", "--config", str(bad))
        assert proc.returncode == 2
        assert "workdirr" in proc.stderr

    def test_missing_required_paths_exit_2(self):
        proc = _run_cli("run-all")
        assert proc.returncode == 2
        assert "x_dir" in proc.stderr

    def test_enhance_round_trip(self, tmp_path):
        from rankloop.checkpoint import write_checkpoint
        from rankloop.enhancer import CurveEnhancer
        from rankloop.imgio import load_image, save_image
        from rankloop.validation import luminance
        enh = CurveEnhancer(iterations=2, grid_size=1)
        enh.set_raw(np.full((2, 3, 1, 1), 0.6))
        ckpt_path = tmp_path / "f.ckpt"
        write_checkpoint(enh.to_checkpoint(stage=1), ckpt_path)
        dark = tmp_path / "dark.png"
        rng = np.random.default_rng(3)
        save_image(rng.uniform(0.05, 0.3, size=(16, 16, 3)), dark)
        out = tmp_path / "lit.png"
        proc = _run_cli("enhance", "--ckpt", str(ckpt_path),
                        "--in", str(dark), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        assert out.is_file()
        assert luminance(load_image(out)).mean() >= luminance(load_image(dark)).mean()

    def test_enhance_missing_checkpoint_exit_4(self, tmp_path):
        proc = _run_cli("enhance", "--ckpt", str(tmp_path / "none.ckpt"),
                        "--in", "x.png", "--out", "y.png")
        assert proc.returncode == 4

    def test_study_aggregate(self, tmp_path):
        votes = tmp_path / "votes.csv"
        votes.write_text("method_i,method_j,winner\n" + "ours,base,ours\n" * 8
                         + "ours,base,base\n" * 2)
        out = tmp_path / "report"
        proc = _run_cli("study-aggregate", "--votes", str(votes),
                        "--out-dir", str(out))
        assert proc.returncode == 0, proc.stderr
        assert (out / "scores.csv").is_file()
        report = json.loads((out / "report.json").read_text())
        assert report["scores"]["ours"] > report["scores"]["base"]
        assert proc.stdout.splitlines()[0].startswith("ours")

    def test_simulate_votes_requires_voting_stage(self, tmp_path):
        proc = _run_cli("simulate-votes", "--workdir", str(tmp_path))
        assert proc.returncode == 3

    def test_help_mentions_scales(self):
        proc = _run_cli("--help")
        assert proc.returncode == 0
        assert "Desk-scale" in proc.stdout or "desk-scale" in proc.stdout
