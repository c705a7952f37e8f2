"""Command-line behavior: artifacts, determinism, exit codes."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from mopsched import cli


@pytest.fixture()
def small_config(tmp_path):
    """Trimmed 5-bus config: short horizon, both cardinality modes."""
    cfg = {
        "network": "5bus",
        "profiles": "synthetic",
        "synthetic": {"days": 1, "steps_per_day": 8},
        "seed": 11,
        "converter": {
            "pcc_buses": ["bus_3", "bus_5"],
            "s_total_kva": 400.0,
            "loss_coeff": 0.01,
            "dc_der": {"profile": "solar", "peak_kw": 150.0},
        },
        "loads": [
            {"bus": "bus_2", "profile": "residential_a", "peak_kw": 180.0, "peak_kvar": 90.0},
            {"bus": "bus_3", "profile": "commercial", "peak_kw": 140.0, "peak_kvar": 70.0},
            {"bus": "bus_4", "profile": "residential_b", "peak_kw": 220.0, "peak_kvar": 110.0},
            {"bus": "bus_5", "profile": "solar", "peak_kw": -250.0, "peak_kvar": 0.0},
        ],
        "voltage": {"v_min_pu": 0.95, "v_max_pu": 1.05, "monitored_buses": None},
        "cardinality": [1, "unconstrained"],
        "timestep_hours": 0.5,
        "mip": {"rel_gap": 1e-4, "abs_gap": 1e-5, "node_limit": 10000},
        "output_dir": str(tmp_path / "out"),
        "jobs": 1,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


def read_csv_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


class TestRun:
    def test_artifacts_and_totals(self, small_config):
        path, cfg = small_config
        result = CliRunner().invoke(cli.main, ["run", "--config", str(path)])
        assert result.exit_code == 0, result.output
        out = Path(cfg["output_dir"])
        for label in ("n1", "unconstrained"):
            assert (out / f"mission_{label}.csv").exists()
            assert (out / f"summary_{label}.json").exists()
            assert (out / f"powers_{label}.svg").exists()
            assert (out / f"ec_{label}.svg").exists()
            assert (out / f"ec_hist_{label}.svg").exists()
        assert (out / "loss_fraction_n1.svg").exists()
        assert (out / "summary.json").exists()

        rows = read_csv_columns(out / "mission_n1.csv")
        assert len(rows) == 8
        summary = json.loads((out / "summary_n1.json").read_text())
        csv_total = sum(float(r["obj"]) for r in rows) * 0.5
        assert abs(summary["total_loss_kwh"] - csv_total) < 1e-9
        assert summary["mec"] <= 1

    def test_byte_identical_reruns(self, small_config, tmp_path):
        path, cfg = small_config
        runner = CliRunner()
        outs = []
        for sub in ("a", "b"):
            outdir = tmp_path / sub
            r = runner.invoke(cli.main, ["run", "--config", str(path), "--out", str(outdir)])
            assert r.exit_code == 0, r.output
            outs.append(outdir)
        for f in sorted(outs[0].iterdir()):
            assert (outs[1] / f.name).read_bytes() == f.read_bytes()

    def test_unknown_bus_exits_2(self, small_config):
        path, cfg = small_config
        cfg["loads"][0]["bus"] = "bus_99"
        path.write_text(json.dumps(cfg))
        result = CliRunner().invoke(cli.main, ["run", "--config", str(path)])
        assert result.exit_code == 2
        assert "bus_99" in result.output

    def test_empty_cardinality_warns_exit_0(self, small_config):
        path, cfg = small_config
        cfg["cardinality"] = []
        path.write_text(json.dumps(cfg))
        result = CliRunner().invoke(cli.main, ["run", "--config", str(path)])
        assert result.exit_code == 0
        assert "warning" in result.output

    def test_missing_config_exits_2(self):
        result = CliRunner().invoke(cli.main, ["run", "--config", "nope.json"])
        assert result.exit_code == 2

    def test_missing_network_exits_2(self, small_config):
        path, cfg = small_config
        cfg["network"] = "missing_net.json"
        path.write_text(json.dumps(cfg))
        result = CliRunner().invoke(cli.main, ["run", "--config", str(path)])
        assert result.exit_code == 2

    def test_dump_ir_and_traces(self, small_config, tmp_path):
        path, cfg = small_config
        solver_trace = tmp_path / "ipm.csv"
        mip_trace = tmp_path / "nodes.csv"
        result = CliRunner().invoke(
            cli.main,
            [
                "run",
                "--config",
                str(path),
                "--dump-ir",
                "--solver-trace",
                str(solver_trace),
                "--mip-trace",
                str(mip_trace),
            ],
        )
        assert result.exit_code == 0, result.output
        out = Path(cfg["output_dir"])
        assert (out / "ir_n1.json").exists()
        assert (out / "ir_unconstrained.json").exists()
        assert solver_trace.read_text().startswith("iter,pcost,dcost,gap")
        assert mip_trace.read_text().startswith("node,bound")

    def test_cardinality_override(self, small_config):
        path, cfg = small_config
        result = CliRunner().invoke(
            cli.main,
            ["run", "--config", str(path), "--cardinality", "0"],
        )
        assert result.exit_code == 0, result.output
        out = Path(cfg["output_dir"])
        assert (out / "mission_n0.csv").exists()
        assert not (out / "mission_n1.csv").exists()

    def test_profiles_csv_ingestion(self, small_config, tmp_path):
        from mopsched import profiles as PR

        path, cfg = small_config
        prof_csv = tmp_path / "profiles.csv"
        PR.write_profiles_csv(prof_csv, PR.synthetic_profiles(days=1, steps_per_day=6, seed=4))
        result = CliRunner().invoke(
            cli.main,
            ["run", "--config", str(path), "--profiles", str(prof_csv), "--cardinality", "1"],
        )
        assert result.exit_code == 0, result.output
        rows = read_csv_columns(Path(cfg["output_dir"]) / "mission_n1.csv")
        assert len(rows) == 6


class TestVerify:
    def test_fixture_passes(self, tmp_path):
        result = CliRunner().invoke(
            cli.main, ["verify", "--config", "5bus", "--out", str(tmp_path)]
        )
        assert result.exit_code == 0, result.output
        report = (tmp_path / "verify_report.csv").read_text()
        assert "FAIL" not in report

    def test_corrupted_lambda_fails(self, tmp_path):
        runner = CliRunner()
        lin_dir = tmp_path / "lin"
        r = runner.invoke(
            cli.main, ["linearize", "--config", "5bus", "--out", str(lin_dir)]
        )
        assert r.exit_code == 0, r.output
        lam = np.loadtxt(lin_dir / "Lambda.csv", delimiter=",")
        np.savetxt(lin_dir / "Lambda.csv", -lam, delimiter=",", fmt="%.17g")
        r = runner.invoke(
            cli.main,
            [
                "verify",
                "--config",
                "5bus",
                "--out",
                str(tmp_path / "rep"),
                "--linearization",
                str(lin_dir),
            ],
        )
        assert r.exit_code == 1
        assert "FAIL" in r.output

    def test_missing_linearization_file_exits_2(self, tmp_path):
        r = CliRunner().invoke(
            cli.main,
            [
                "verify",
                "--config",
                "5bus",
                "--out",
                str(tmp_path),
                "--linearization",
                str(tmp_path / "nowhere"),
            ],
        )
        assert r.exit_code == 2

    def test_intact_linearization_passes(self, tmp_path):
        runner = CliRunner()
        lin_dir = tmp_path / "lin"
        runner.invoke(cli.main, ["linearize", "--config", "5bus", "--out", str(lin_dir)])
        r = runner.invoke(
            cli.main,
            [
                "verify",
                "--config",
                "5bus",
                "--out",
                str(tmp_path / "rep"),
                "--linearization",
                str(lin_dir),
            ],
        )
        assert r.exit_code == 0, r.output


class TestLinearize:
    def test_writes_model_csvs(self, tmp_path):
        r = CliRunner().invoke(
            cli.main, ["linearize", "--config", "5bus", "--out", str(tmp_path)]
        )
        assert r.exit_code == 0, r.output
        K = np.loadtxt(tmp_path / "K.csv", delimiter=",")
        assert K.shape == (4, 4)  # 4 non-slack buses x 2m
        lam = np.loadtxt(tmp_path / "Lambda.csv", delimiter=",")
        assert lam.shape == (4, 4)
        assert np.linalg.eigvalsh(lam).min() >= -1e-9


class TestEc:
    def test_recomputes_from_csv(self, small_config, tmp_path):
        path, cfg = small_config
        runner = CliRunner()
        assert runner.invoke(cli.main, ["run", "--config", str(path)]).exit_code == 0
        mission_csv = Path(cfg["output_dir"]) / "mission_unconstrained.csv"
        out_csv = tmp_path / "ec.csv"
        r = runner.invoke(
            cli.main,
            ["ec", "--input", str(mission_csv), "--s-total", "400", "--out", str(out_csv)],
        )
        assert r.exit_code == 0, r.output
        assert "MEC=" in r.output
        rows = read_csv_columns(out_csv)
        assert len(rows) == 8
        # cross-check against the mission CSV's own EC column
        mrows = read_csv_columns(mission_csv)
        assert [r["EC"] for r in rows] == [m["EC"] for m in mrows]

    def test_missing_input_exits_2(self):
        r = CliRunner().invoke(cli.main, ["ec", "--input", "nope.csv", "--s-total", "400"])
        assert r.exit_code == 2
