import json

import numpy as np
import pytest

from helpers import tiny_config
from onlinenav.cli import main
from onlinenav.config import (Config, ConfigFileError, config_to_text, parse_config,
                              read_config)
from onlinenav.io import read_jsonl
from onlinenav.maps import empty_room


class TestConfig:
    def test_empty_is_default(self):
        assert parse_config("") == Config()

    def test_comments_and_sections(self):
        cfg = parse_config("# run\n[trainer]\nrho = 0.5  # mostly policy\nscenes = maze:1, maze:2\n"
                           "[planner]\nline_search = false\n")
        assert cfg.trainer.rho == 0.5 and cfg.trainer.scenes == ("maze:1", "maze:2")
        assert cfg.planner.line_search is False

    @pytest.mark.parametrize("text, line", [
        ("[trainer]\nE = 4\nrho = 1.5\n", 3),
        ("[trainer]\nT = many\n", 2),
        ("[trainer]\nbogus = 1\n", 2),
        ("[nowhere]\n", 1),
        ("E = 4\n", 1),
        ("[trainer]\njust words\n", 2),
        ("[planner]\nline_search = maybe\n", 2),
    ])
    def test_errors_name_the_line(self, text, line):
        with pytest.raises(ConfigFileError) as exc:
            parse_config(text)
        assert exc.value.line == line and f"line {line}" in str(exc.value)

    def test_rho_message(self):
        with pytest.raises(ConfigFileError, match="rho"):
            parse_config("[trainer]\nrho = 1.5\n")

    def test_paper_scale(self):
        t = parse_config("", paper_scale=True).trainer
        assert (t.E, t.T, t.batch_size, t.epochs, t.lr, t.rho, t.iterations, t.F) == \
            (256, 128, 2048, 10, 1e-5, 0.8, 1000, 5)

    def test_round_trip(self):
        cfg = tiny_config(rho=0.3, seed=4)
        assert parse_config(config_to_text(cfg)) == cfg

    def test_missing_scene_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("[trainer]\nscenes = nothere.map\n")
        with pytest.raises(ConfigFileError, match="nothere"):
            read_config(p)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.txt"
    p.write_text(config_to_text(tiny_config(iterations=2)))
    return p


class TestCLI:
    def test_no_command(self, capsys):
        code, _, err = run(capsys)
        assert code == 2 and err.startswith("error[2]")

    def test_unknown_flag(self, capsys):
        assert run(capsys, "train", "--frobnicate")[0] == 2

    def test_bad_config_is_data_error(self, capsys, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("[trainer]\nrho = 1.5\n")
        code, _, err = run(capsys, "train", "--config", p, "--out", tmp_path / "r")
        assert code == 3 and "line 2" in err and len(err.strip().splitlines()) == 1

    def test_missing_checkpoint(self, capsys, tmp_path):
        run(capsys, "bench-gen", "--scenes", "maze:30", "--n-per-scene", "2", "--out",
            tmp_path / "b.jsonl")
        code, _, err = run(capsys, "eval", "--benchmark", tmp_path / "b.jsonl", "--checkpoint",
                           tmp_path / "none.ckpt")
        assert code == 3 and "none.ckpt" in err

    def test_bench_gen_then_eval_expert(self, capsys, tmp_path):
        code, out, _ = run(capsys, "bench-gen", "--scenes", "maze:30", "maze:31", "--n-per-scene",
                           "3", "--f-max", "2", "--out", tmp_path / "b.jsonl")
        assert code == 0 and json.loads(out)["episodes"] == 6
        code, out, _ = run(capsys, "eval", "--actor", "expert", "--benchmark", tmp_path / "b.jsonl",
                           "--out", tmp_path / "r.jsonl")
        assert code == 0 and json.loads(out)["mSR"] == 100.0

    def test_train_resume_and_eval_policy(self, capsys, tmp_path, cfg_file):
        out_dir = tmp_path / "run"
        code, _, _ = run(capsys, "train", "--config", cfg_file, "--out", out_dir, "--stop-after", 1)
        assert code == 0 and not (out_dir / "final.ckpt").exists()
        assert run(capsys, "train", "--config", cfg_file, "--out", out_dir)[0] == 2
        assert run(capsys, "train", "--config", cfg_file, "--out", out_dir, "--resume")[0] == 0
        full = tmp_path / "full"
        assert run(capsys, "train", "--config", cfg_file, "--out", full)[0] == 0
        assert (full / "metrics.jsonl").read_bytes() == (out_dir / "metrics.jsonl").read_bytes()

        run(capsys, "bench-gen", "--config", cfg_file, "--scenes", "maze:30", "--n-per-scene", 2,
            "--out", tmp_path / "b.jsonl")
        code, out, _ = run(capsys, "eval", "--config", cfg_file, "--benchmark", tmp_path / "b.jsonl",
                           "--checkpoint", full / "final.ckpt", "--out", tmp_path / "r.jsonl",
                           "--transcript", tmp_path / "t.jsonl")
        assert code == 0
        recs = read_jsonl(tmp_path / "t.jsonl")
        assert sum(r["type"] == "episode" for r in recs) == 2
        assert any("samples" in r for r in recs if r["type"] == "decision")

    def test_eval_on_training_scene_is_rejected(self, capsys, tmp_path, cfg_file):
        run(capsys, "bench-gen", "--scenes", "maze:0", "--n-per-scene", 1, "--out",
            tmp_path / "b.jsonl")
        code, _, err = run(capsys, "eval", "--config", cfg_file, "--actor", "expert",
                           "--benchmark", tmp_path / "b.jsonl")
        assert code == 3 and "overlap" in err

    def test_plan(self, capsys, tmp_path):
        room = tmp_path / "room.map"
        room.write_text(empty_room(6, 6).to_text())
        code, out, _ = run(capsys, "plan", "--map", room, "--start", "1,1,0", "--goal", "5,5",
                           "--out", tmp_path / "p.json")
        assert code == 0
        rec = json.loads((tmp_path / "p.json").read_text())
        assert rec["raw_length"] == pytest.approx(np.hypot(4, 4), abs=0.3)
        assert len(rec["waypoints"]) == 24

    def test_plan_bad_coordinates(self, capsys, tmp_path):
        room = tmp_path / "room.map"
        room.write_text(empty_room(6, 6).to_text())
        assert run(capsys, "plan", "--map", room, "--start", "1", "--goal", "5,5")[0] == 2

    def test_plan_into_wall_is_runtime_error(self, capsys, tmp_path):
        room = tmp_path / "room.map"
        room.write_text(empty_room(6, 6).to_text())
        code, _, err = run(capsys, "plan", "--map", room, "--start", "1,1", "--goal", "0.05,0.05")
        assert code == 4 and err.startswith("error[4]")

    def test_collect_offline(self, capsys, tmp_path, cfg_file):
        code, out, _ = run(capsys, "collect-offline", "--config", cfg_file, "--n-tuples", 10,
                           "--out", tmp_path / "d.jsonl")
        assert code == 0 and len(read_jsonl(tmp_path / "d.jsonl")) == 10

    def test_workers_validated(self, capsys):
        assert run(capsys, "plan", "--workers", "0")[0] == 2
