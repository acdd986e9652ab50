"""CLI behaviour: exit codes, output formats, artifact layout, determinism.

Subcommands run in-process through ``main(argv)`` so coverage and tracebacks
stay useful; one test exercises the installed console script end to end.
"""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from pumpsurge import __version__
from pumpsurge.cli import main
from pumpsurge.hydraulics import HydraulicModel
from pumpsurge.network import load_bundled
from pumpsurge.scenario import load_scenarios

TINY_TRAIN = [
    "--set", "train.total_steps=40",
    "--set", "train.init_steps=8",
    "--set", "train.batch_size=4",
    "--set", "train.replay_capacity=64",
    "--set", "train.hidden=[8, 6]",
    "--set", "train.target_sync_every=10",
    "--set", "train.validation_every=20",
    "--set", "scenarios.n_validation=2",
    "--set", "scenarios.n_test=2",
]


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip() == f"pumpsurge {__version__}"

    def test_missing_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_console_script_installed(self):
        proc = subprocess.run([sys.executable, "-c",
                               "from pumpsurge.cli import main; raise SystemExit(main(['--version']))"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert __version__ in proc.stdout


class TestSolve:
    def test_heads_csv_matches_direct_solve(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--net", "anytown-mod",
                               "--speeds", "0.9")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "node,head_m"
        net = load_bundled("anytown-mod")
        assert len(lines) == 1 + len(net.junctions)
        state = HydraulicModel(net).solve([0.9])
        heads = dict(line.split(",") for line in lines[1:])
        for junction, head in zip(net.junctions, state.heads):
            assert float(heads[junction.id]) == pytest.approx(head, abs=1e-12)

    def test_json_payload(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--net", "anytown-mod",
                               "--speeds", "0.9", "--demand-factor", "0.8",
                               "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["converged"] is True
        assert payload["iterations"] >= 1
        assert len(payload["heads"]) == 22
        op = payload["pump_ops"][0]
        assert {"group", "flow_lps", "head_m", "efficiency"} <= op.keys()
        assert payload["tank_flows"]

    def test_speed_count_mismatch_exits_1(self, capsys):
        code, _, err = run_cli(capsys, "solve", "--net", "anytown-mod",
                               "--speeds", "0.9,1.0")
        assert code == 1
        assert "pumpsurge: error:" in err

    def test_unknown_network_exits_1(self, capsys):
        code, _, err = run_cli(capsys, "solve", "--net", "atlantis.inp",
                               "--speeds", "1.0")
        assert code == 1
        assert "pumpsurge: error:" in err


class TestScenarios:
    def test_generates_jsonl(self, capsys, tmp_path):
        out = tmp_path / "scen.jsonl"
        code, text, _ = run_cli(capsys, "scenarios", "--net", "anytown-mod",
                                "--n", "3", "--seed", "7", "--out", str(out))
        assert code == 0
        assert "wrote 3 scenarios" in text
        scenarios = load_scenarios(out)
        assert len(scenarios) == 3
        assert all(s.reference is None for s in scenarios)

    def test_with_reference_and_determinism(self, capsys, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        argv = ("scenarios", "--net", "anytown-mod", "--n", "2", "--seed", "7",
                "--with-reference", "--guide", "osrt")
        assert run_cli(capsys, *argv, "--out", str(a))[0] == 0
        assert run_cli(capsys, *argv, "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()
        scenarios = load_scenarios(a)
        assert all(s.reference is not None for s in scenarios)
        assert all(s.reference.evaluations == 1 for s in scenarios)

    def test_json_output(self, capsys, tmp_path):
        out = tmp_path / "scen.jsonl"
        code, text, _ = run_cli(capsys, "scenarios", "--net", "anytown-mod",
                                "--n", "2", "--out", str(out), "--json")
        assert code == 0
        payload = json.loads(text)
        assert payload["n"] == 2 and payload["stream"] == "test-scenarios"


class TestOptimize:
    def test_csv_out_writes_raw_cells(self, capsys, tmp_path):
        out = tmp_path / "cells.csv"
        code, text, _ = run_cli(capsys, "optimize", "--net", "anytown-mod",
                                "--method", "osrt", "--n", "2", "--seed", "3",
                                "--out", str(out))
        assert code == 0
        assert out.exists()
        from pumpsurge.harness import read_baseline_csv
        cells = read_baseline_csv(out)
        assert len(cells) == 2
        assert text.splitlines()[0].startswith("method,n,mean_value")

    def test_directory_out_writes_report(self, capsys, tmp_path):
        out = tmp_path / "sweep"
        code, text, _ = run_cli(capsys, "optimize", "--net", "anytown-mod",
                                "--method", "nm", "--n", "2", "--seed", "3",
                                "--budget", "15", "--out", str(out), "--json")
        assert code == 0
        assert (out / "baseline.csv").exists()
        assert (out / "report" / "baseline_summary.csv").exists()
        payload = json.loads(text)
        assert payload["stats"]["nm"]["n"] == 2
        assert payload["stats"]["nm"]["mean_evaluations"] <= 15


@pytest.fixture(scope="module")
def train_run_dir(tmp_path_factory):
    """One tiny CLI training run shared by the train/evaluate/report tests."""
    out = tmp_path_factory.mktemp("cli") / "run"
    code = main(["train", "--net", "anytown-mod", "--seed", "9",
                 "--out", str(out), *TINY_TRAIN])
    assert code == 0
    return out


class TestTrainEvaluateReport:
    def test_run_directory_layout(self, train_run_dir):
        names = {p.name for p in train_run_dir.iterdir()}
        assert {"config.toml", "scenarios.jsonl", "trainlog.csv",
                "checkpoints", "report"} <= names
        assert (train_run_dir / "checkpoints" / "final.npz").exists()
        assert (train_run_dir / "report" / "curve_loss.csv").exists()

    def test_config_records_run_seed(self, train_run_dir):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        tree = tomllib.loads((train_run_dir / "config.toml").read_text())
        assert tree["run"]["seed"] == 9
        assert tree["train"]["total_steps"] == 40
        assert tree["network"]["preset"] == "paper"

    def test_evaluate_writes_final_table(self, capsys, train_run_dir):
        code, text, _ = run_cli(capsys, "evaluate", "--run",
                                str(train_run_dir), "--json")
        assert code == 0
        payload = json.loads(text)
        assert payload["n_scenarios"] == 2
        assert np.isfinite(payload["mean_value_ratio"])
        assert (train_run_dir / "test_scenarios.jsonl").exists()
        assert (train_run_dir / "report" / "final_test.csv").exists()

    def test_evaluate_text_format(self, capsys, train_run_dir):
        code, text, _ = run_cli(capsys, "evaluate", "--run",
                                str(train_run_dir), "--label", "text")
        assert code == 0
        assert "value_ratio" in text and "anytown-mod" in text

    def test_evaluate_missing_run_exits_1(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "evaluate", "--run",
                               str(tmp_path / "nope"))
        assert code == 1
        assert "config.toml" in err

    def test_report_regeneration_is_bit_identical(self, capsys, train_run_dir):
        report = train_run_dir / "report"
        before = {p.name: p.read_bytes() for p in report.glob("*.csv")}
        code, text, _ = run_cli(capsys, "report", "--from", str(train_run_dir))
        assert code == 0
        after = {p.name: p.read_bytes() for p in report.glob("*.csv")}
        for name in before:
            if name.startswith("curve_"):
                assert after[name] == before[name]
        assert "curve_loss.csv" in text

    def test_report_missing_dir_exits_1(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "report", "--from",
                               str(tmp_path / "nothing"))
        assert code == 1
        assert "not a directory" in err


class TestMultiRunTrain:
    def test_runs_flag_creates_suffixed_dirs(self, capsys, tmp_path):
        out = tmp_path / "multi"
        code, text, _ = run_cli(
            capsys, "train", "--net", "anytown-mod", "--seed", "3",
            "--runs", "2", "--out", str(out), *TINY_TRAIN, "--json")
        assert code == 0
        payload = json.loads(text)
        assert [r["seed"] for r in payload["runs"]] == [3, 4]
        assert (tmp_path / "multi-r0" / "trainlog.csv").exists()
        assert (tmp_path / "multi-r1" / "trainlog.csv").exists()
