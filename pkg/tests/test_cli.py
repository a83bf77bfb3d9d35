"""CLI subcommands, exit codes, and output files."""

import json
import math
import socket
import subprocess
import sys
import time

import pytest

from autolrs.cli import main
from autolrs.simtrainer import Quadratic, SimModel, run_loopback_session

SMALL = [
    "--lr-min", "1e-3",
    "--lr-max", "1.5",
    "--k", "4",
    "--tau-initial", "20",
    "--tau-max", "40",
    "--val-every", "2",
    "--budget-steps", "60",
]


def run_main(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsageErrors:
    def test_no_subcommand(self, capsys):
        code, _, err = run_main([], capsys)
        assert code == 1
        assert "usage" in err

    def test_unknown_flag(self, capsys):
        code, _, err = run_main(["simulate", "--warp-speed", "9"], capsys)
        assert code == 1

    def test_help_exits_zero_and_lists_flags(self, capsys):
        code, out, _ = run_main(["simulate", "--help"], capsys)
        assert code == 0
        for flag in ["--lr-min", "--lr-max", "--k", "--tau-initial", "--tau-max",
                     "--kappa", "--warmup-steps", "--warmup-peak-lr", "--seed",
                     "--budget-steps", "--config", "--landscape"]:
            assert flag in out
        # documented defaults match the search config defaults
        assert "(default: 0.001)" in out
        assert "(default: 15000)" in out

    def test_missing_config_file(self, capsys):
        code, _, err = run_main(["simulate", "--config", "/no/such/file.json"], capsys)
        assert code == 1
        assert "cannot read config file" in err

    def test_malformed_config_file(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        code, _, err = run_main(["simulate", "--config", str(path)], capsys)
        assert code == 1
        assert "not valid JSON" in err

    def test_invalid_config_values(self, capsys):
        code, _, err = run_main(["simulate", "--k", "0"], capsys)
        assert code == 1
        assert "k must be" in err

    def test_fit_missing_file(self, capsys):
        code, _, err = run_main(["fit", "/no/such/losses.csv"], capsys)
        assert code == 1
        assert "cannot read loss file" in err

    def test_fit_garbage_rows(self, tmp_path, capsys):
        path = tmp_path / "losses.csv"
        path.write_text("step,loss\n1,2.0\nbanana,3\n")
        code, _, err = run_main(["fit", str(path)], capsys)
        assert code == 1
        assert "expected 'step,loss'" in err

    def test_export_missing_file(self, capsys):
        code, _, err = run_main(["export", "/no/such/record.json"], capsys)
        assert code == 1

    def test_export_wrong_document(self, tmp_path, capsys):
        path = tmp_path / "record.json"
        path.write_text('{"something": "else"}')
        code, _, err = run_main(["export", str(path)], capsys)
        assert code == 1
        assert "not a schedule record" in err


class TestSimulate:
    def test_writes_outputs_and_summary(self, tmp_path, capsys):
        out = tmp_path / "run"
        code, stdout, _ = run_main(["simulate", *SMALL, "--out-dir", str(out)], capsys)
        assert code == 0
        record = json.loads((out / "record.json").read_text())
        assert [s["tau"] for s in record["metadata"]["stages"]] == [20, 40]
        schedule = (out / "schedule.csv").read_text().splitlines()
        assert schedule[0] == "step,lr"
        assert len(schedule) == len(record["entries"]) + 1
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "step,loss,source"
        assert len(trace) > 1
        assert "total steps: 60 (budget reached)" in stdout

    def test_two_runs_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_main(["simulate", *SMALL, "--out-dir", str(a)], capsys)[0] == 0
        assert run_main(["simulate", *SMALL, "--out-dir", str(b)], capsys)[0] == 0
        assert (a / "record.json").read_bytes() == (b / "record.json").read_bytes()
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"k": 4, "tau_initial": 20, "tau_max": 40,
                                      "lr_max": 1.5, "val_every": 2, "budget_steps": 40}))
        out = tmp_path / "run"
        code, _, _ = run_main(
            ["simulate", "--config", str(config), "--budget-steps", "20", "--out-dir", str(out)],
            capsys,
        )
        assert code == 0
        record = json.loads((out / "record.json").read_text())
        assert record["metadata"]["config"]["budget_steps"] == 20
        assert record["metadata"]["config"]["k"] == 4

    def test_noisy_quadratic_landscape(self, tmp_path, capsys):
        out = tmp_path / "run"
        code, _, _ = run_main(
            ["simulate", *SMALL, "--landscape", "noisy-quadratic", "--noise-std", "0.05",
             "--curvatures", "1.0,0.5", "--out-dir", str(out)],
            capsys,
        )
        assert code == 0


class TestFit:
    def write_series(self, tmp_path, noise=None):
        rows = ["step,loss"]
        for t in range(1, 101):
            value = 2.0 * math.exp(-0.01 * t) + 0.5
            if noise is not None:
                value += noise(t)
            rows.append(f"{t},{value!r}")
        path = tmp_path / "losses.csv"
        path.write_text("\n".join(rows) + "\n")
        return path

    def test_recovers_noiseless_parameters(self, tmp_path, capsys):
        path = self.write_series(tmp_path)
        code, out, _ = run_main(["fit", str(path), "--horizon", "1000"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["a"] == pytest.approx(2.0, rel=1e-3)
        assert doc["b"] == pytest.approx(-0.01, rel=1e-3)
        assert doc["c"] == pytest.approx(0.5, rel=1e-3)
        assert doc["forecast"] == pytest.approx(2.0 * math.exp(-10.0) + 0.5, rel=1e-2)
        assert doc["horizon"] == 1000
        assert not doc["degenerate"]

    def test_default_horizon_is_ten_x(self, tmp_path, capsys):
        path = self.write_series(tmp_path)
        code, out, _ = run_main(["fit", str(path)], capsys)
        assert code == 0
        assert json.loads(out)["horizon"] == 1000

    def test_smoothing_removes_spike(self, tmp_path, capsys):
        path = self.write_series(tmp_path, noise=lambda t: 3.0 if t == 10 else 0.0)
        code, out, _ = run_main(["fit", str(path), "--horizon", "1000"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert 10 in doc["removed_steps"]
        assert doc["c"] == pytest.approx(0.5, abs=0.02)

    def test_no_smoothing_flag(self, tmp_path, capsys):
        path = self.write_series(tmp_path)
        code, out, _ = run_main(["fit", str(path), "--no-smoothing"], capsys)
        assert code == 0
        assert json.loads(out)["removed_steps"] == []

    def test_out_file(self, tmp_path, capsys):
        path = self.write_series(tmp_path)
        target = tmp_path / "fit.json"
        code, out, _ = run_main(["fit", str(path), "--out", str(target)], capsys)
        assert code == 0
        assert out == ""
        assert json.loads(target.read_text())["a"] == pytest.approx(2.0, rel=1e-3)


class TestOracle:
    def test_grid_table_and_best(self, capsys):
        code, out, err = run_main(
            ["oracle", "--lr-min", "1e-3", "--lr-max", "1.5", "--tau", "50", "--grid-size", "32"],
            capsys,
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "lr,loss"
        assert len(lines) == 33
        # every row must be two bare float literals
        rows = [line.split(",") for line in lines[1:]]
        grid = [float(lr) for lr, _ in rows]
        losses = [float(loss) for _, loss in rows]
        assert grid[0] == pytest.approx(1e-3) and grid[-1] == pytest.approx(1.5)
        assert min(losses) >= 0.0
        assert "best_lr=" in err
        best_lr = float(err.split("best_lr=")[1].split()[0])
        assert 0.5 < best_lr < 1.5  # quadratic with curvature 1 solves near lr 1


class TestExport:
    def test_round_trip_from_simulate(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_main(["simulate", *SMALL, "--out-dir", str(out)], capsys)[0] == 0
        code, stdout, _ = run_main(["export", str(out / "record.json")], capsys)
        assert code == 0
        assert stdout == (out / "schedule.csv").read_text()
        assert stdout.startswith("step,lr\n")

    def test_out_file(self, tmp_path, capsys):
        run_dir = tmp_path / "run"
        assert run_main(["simulate", *SMALL, "--out-dir", str(run_dir)], capsys)[0] == 0
        target = tmp_path / "schedule.csv"
        code, stdout, _ = run_main(
            ["export", str(run_dir / "record.json"), "--out", str(target)], capsys
        )
        assert code == 0
        assert stdout == ""
        assert target.read_text().startswith("step,lr\n")


class TestServe:
    def test_runtime_failure_on_busy_port(self, capsys):
        placeholder = socket.socket()
        placeholder.bind(("127.0.0.1", 0))
        placeholder.listen(1)
        port = placeholder.getsockname()[1]
        try:
            code, _, err = run_main(["serve", "--port", str(port)], capsys)
        finally:
            placeholder.close()
        assert code == 2
        assert "error" in err.lower() or "OSError" in err

    def test_subprocess_session(self):
        process = subprocess.Popen(
            [sys.executable, "-m", "autolrs.cli", "serve", "--port", "0", *SMALL],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            line = process.stdout.readline()
            assert line.startswith("listening on ")
            host, port = line.split()[-1].rsplit(":", 1)
            deadline = time.monotonic() + 30
            trainer = run_loopback_session(host, int(port), SimModel(Quadratic([1.0])))
            assert trainer.shutdown_reason == "budget reached"
            assert time.monotonic() < deadline
        finally:
            process.terminate()
            process.wait(timeout=10)
