import json

import pytest

from ghcbc.cli import main

FAST = ["--set", "policy.enc_layers=1", "--set", "policy.dec_layers=1",
        "--set", "policy.hist_layers=1", "--set", "policy.history_k=4",
        "--set", "policy.chunk_k=4", "--set", "train.batch_size=2",
        "--set", "train.steps=10", "--set", "train.eval_every=10",
        "--set", "train.eval_episodes=1"]


@pytest.fixture(scope="module")
def demos(tmp_path_factory):
    out = tmp_path_factory.mktemp("demos")
    assert main(["gen-demos", "--out", str(out), "--n", "3", "--seed", "0"]) == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, demos):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--demos", str(demos), "--out", str(out), "--seed", "0", *FAST])
    assert code == 0
    return out


class TestGenDemos:
    def test_writes_episodes_and_manifest(self, demos):
        manifest = json.loads((demos / "manifest.json").read_text())
        assert len(manifest["episodes"]) == 3

    def test_rerun_byte_identical(self, demos, tmp_path):
        out2 = tmp_path / "again"
        assert main(["gen-demos", "--out", str(out2), "--n", "3", "--seed", "0"]) == 0
        for name in json.loads((demos / "manifest.json").read_text())["episodes"]:
            assert (demos / name).read_bytes() == (out2 / name).read_bytes()

    def test_infeasible_spec_exit_code(self, tmp_path, capsys):
        code = main(["gen-demos", "--out", str(tmp_path / "x"), "--n", "1",
                     "--set", "world.min_separation=9.0"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_config_file_flag(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[run]\nprofile = desk\n\n[train]\nn_demos = 2\n")
        out = tmp_path / "from_file"
        assert main(["gen-demos", "--config", str(ini), "--out", str(out),
                     "--seed", "0"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["episodes"]) == 2


class TestTrain:
    def test_artifacts(self, run_dir):
        assert (run_dir / "config.json").exists()
        assert (run_dir / "metrics.jsonl").exists()
        assert (run_dir / "best.ckpt").exists()
        assert (run_dir / "final.ckpt").exists()

    def test_missing_demos_exit_one(self, tmp_path, capsys):
        missing = tmp_path / "absent"
        code = main(["train", "--demos", str(missing), "--out", str(tmp_path / "r")])
        assert code == 1
        assert str(missing) in capsys.readouterr().err

    def test_identical_runs_identical_logs(self, demos, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--demos", str(demos), "--out", str(a), "--seed", "3", *FAST]) == 0
        assert main(["train", "--demos", str(demos), "--out", str(b), "--seed", "3", *FAST]) == 0
        assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()


class TestEval:
    def test_expert_baseline_full_success(self, tmp_path):
        out = tmp_path / "expert"
        assert main(["eval", "--expert", "--episodes", "3", "--out", str(out)]) == 0
        result = json.loads((out / "eval.json").read_text())
        assert result["success_rate"] == 1.0

    def test_eval_checkpoint(self, run_dir, tmp_path):
        out = tmp_path / "ev"
        code = main(["eval", "--run", str(run_dir), "--episodes", "2", "--out", str(out)])
        assert code == 0
        result = json.loads((out / "eval.json").read_text())
        assert result["episodes"] == 2
        traces = sorted((out / "traces").glob("*.trace"))
        assert len(traces) == 2

    def test_missing_checkpoint_exit_one(self, tmp_path, capsys):
        run = tmp_path / "fake_run"
        run.mkdir()
        (run / "config.json").write_text(json.dumps({"profile": "desk"}))
        code = main(["eval", "--run", str(run), "--episodes", "1",
                     "--out", str(tmp_path / "o")])
        assert code == 1
        assert "best.ckpt" in capsys.readouterr().err


class TestReplay:
    def test_replay_policy_trace(self, run_dir, tmp_path):
        out = tmp_path / "ev"
        assert main(["eval", "--run", str(run_dir), "--episodes", "1",
                     "--out", str(out)]) == 0
        trace = next((out / "traces").glob("*.trace"))
        assert main(["replay", "--trace", str(trace)]) == 0

    def test_missing_trace(self, tmp_path, capsys):
        code = main(["replay", "--trace", str(tmp_path / "none.trace")])
        assert code == 1


class TestAblate:
    def test_single_row_matrix(self, demos, tmp_path):
        out = tmp_path / "ab"
        code = main(["ablate", "--demos", str(demos), "--out", str(out),
                     "--rows", "5", "--episodes", "1", "--seed", "0", *FAST])
        assert code == 0
        rows = json.loads((out / "ablate.json").read_text())
        assert len(rows) == 1 and rows[0]["row"] == 5
        assert (out / "table.txt").exists()

    def test_unknown_row(self, demos, tmp_path):
        assert main(["ablate", "--demos", str(demos), "--out", str(tmp_path / "x"),
                     "--rows", "42"]) == 1


class TestPlotAndUsage:
    def test_plot_emits_svgs(self, run_dir, tmp_path):
        out = tmp_path / "plots"
        assert main(["plot", "--log", str(run_dir / "metrics.jsonl"),
                     "--out", str(out)]) == 0
        names = {p.name for p in out.glob("*.svg")}
        assert {"l_reconst.svg", "l_kl.svg", "success.svg"} <= names

    def test_unknown_set_key_exit_one(self, tmp_path, capsys):
        code = main(["gen-demos", "--out", str(tmp_path / "d"), "--n", "1",
                     "--set", "policy.bogus=1"])
        assert code == 1
        assert "policy.bogus" in capsys.readouterr().err

    def test_usage_error_exit_one(self):
        assert main(["not-a-command"]) == 1
