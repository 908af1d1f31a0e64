"""Command-line interface: every subcommand, exit codes, config files."""
import json
import subprocess
import sys

import pytest

from crystalgs import cli

CHEAP = {
    ("potential", "build"): ["--profile", "cos_r4"],
    ("potential", "eval"): ["--profile", "triangle", "--dimension", "1", "--r", "0", "0.5", "--k", "1"],
    ("potential", "tabulate"): ["--profile", "triangle", "--points", "11"],
    ("lattice", "info"): ["--lattice", "hcp"],
    ("lattice", "thresholds"): [],
    ("lattice", "minimal-bravais"): ["--dimension", "2", "--restarts", "12"],
    ("energy", "density"): ["--profile", "cos_r4", "--lattice", "fcc", "--density-factor", "1.2"],
    ("energy", "box"): ["--profile", "cos_r4", "--multipliers", "2"],
    ("energy", "field"): ["--profile", "cos_r4", "--points", "20"],
    ("energy", "oracle"): ["--profile", "bump_stack", "--n-bumps", "5", "--dimension", "1", "--lattice", "chain"],
    ("verify", "perturb"): ["--profile", "cos_r4", "--multipliers", "2", "--trials", "50"],
    ("verify", "deform"): ["--profile", "cos_r4", "--density-factor", "1.05", "--samples", "20"],
    ("verify", "threshold-unique"): ["--profile", "cos_r4", "--n-random", "2"],
    ("verify", "global-min"): ["--profile", "bump_stack", "--n-bumps", "3", "--dimension", "1",
                               "--lattice", "chain", "--radii", "10", "20"],
    ("verify", "union"): ["--profile", "bump_stack", "--n-bumps", "5", "--dimension", "1",
                          "--union", "chain", "chain:1.5", "--window", "20", "--trials", "20"],
    ("optimize", "run"): ["--profile", "cos_r4", "--density-factor", "3", "--multipliers", "2", "--n", "8"],
    ("optimize", "sfmap"): ["--profile", "cos_r4", "--multipliers", "2"],
    ("thermo", "legendre"): ["--profile", "cos_r4", "--rho", "0.2", "0.9"],
}


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestCommands:
    def test_all_commands_covered(self):
        assert {(g, c) for g in cli.COMMANDS for c in cli.COMMANDS[g]} == set(CHEAP)

    @pytest.mark.parametrize("group, cmd", sorted(CHEAP))
    def test_runs(self, group, cmd, capsys):
        code, out, err = run([group, cmd, *CHEAP[group, cmd]], capsys)
        assert code == 0, err
        doc = json.loads(out)
        assert doc["command"] == f"{group} {cmd}"
        assert doc["ok"] is True
        assert set(doc["metadata"]) == {"timestamp", "version", "threads", "argv"}

    @pytest.mark.parametrize("group, cmd", [("verify", "perturb"), ("optimize", "run"), ("energy", "field")])
    def test_deterministic(self, group, cmd, capsys):
        argv = [group, cmd, *CHEAP[group, cmd], "--seed", "4"]
        first = json.loads(run(argv, capsys)[1])["result"]
        second = json.loads(run(argv, capsys)[1])["result"]
        assert first == second

    def test_output_dir(self, tmp_path, capsys):
        code, _, _ = run(["verify", "perturb", *CHEAP["verify", "perturb"], "--output-dir", str(tmp_path)], capsys)
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["verify-perturb-summary.csv", "verify-perturb-trials.jsonl", "verify-perturb.json"]
        assert len((tmp_path / "verify-perturb-trials.jsonl").read_text().splitlines()) == 50
        assert json.loads((tmp_path / "verify-perturb.json").read_text())["ok"] is True

    def test_no_files_without_output_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        run(["energy", "density", "--profile", "cos_r4"], capsys)
        assert list(tmp_path.iterdir()) == []


class TestConfig:
    def test_file_and_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"profile": "cos_r4", "lattice": "sc", "density_factor": 2.0}))
        _, out, _ = run(["energy", "density", "--config", str(cfg)], capsys)
        from_file = json.loads(out)["result"]
        _, out, _ = run(["energy", "density", "--config", str(cfg), "--lattice", "bcc"], capsys)
        overridden = json.loads(out)["result"]
        assert from_file["configuration"]["name"] == "sc"
        assert overridden["configuration"]["name"] == "bcc"

    def test_schema_violation(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"trials": "many"}))
        code, _, err = run(["verify", "perturb", "--config", str(cfg)], capsys)
        assert code == 2 and "error" in err
        cfg.write_text(json.dumps({"colour": "blue"}))
        assert run(["lattice", "thresholds", "--config", str(cfg)], capsys)[0] == 2

    def test_threads_from_environment(self, monkeypatch, capsys):
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        code, out, _ = run(["verify", "perturb", *CHEAP["verify", "perturb"]], capsys)
        assert code == 0
        assert json.loads(out)["metadata"]["threads"] == 3


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        ["lattice", "info", "--lattice", "diamond"],
        ["lattice", "info", "--lattice", "/nonexistent/cfg.json"],
        ["energy", "density", "--profile", "/nonexistent/profile.json"],
        ["energy", "density", "--density", "dense"],
        ["energy", "density", "--bogus"],
        ["energy"],
        ["potential", "build", "--profile", "cos_r4", "--k0", "-1"],
    ])
    def test_usage_errors(self, argv, capsys):
        assert run(argv, capsys)[0] == 2

    @pytest.mark.parametrize("argv", [
        ["verify", "perturb", "--profile", "cos_r4", "--density-factor", "0.9", "--multipliers", "2",
         "--trials", "5"],
        ["energy", "oracle", "--profile", "cos_r4", "--tolerance", "1e-12"],
    ])
    def test_check_failures(self, argv, capsys):
        assert run(argv, capsys)[0] == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "crystalgs", "lattice", "thresholds"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        rows = json.loads(proc.stdout)["result"]["thresholds"]
        assert all(r["relative_difference"] < 1e-10 for r in rows)
