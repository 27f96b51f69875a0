import json
import os

import pytest

from cfbench.cli import main
from cfbench.trajectory import emit_csv

from conftest import constant_trajectory


@pytest.fixture
def constant_csv(tmp_path):
    path = tmp_path / "constant.csv"
    emit_csv([constant_trajectory("0", n=120), constant_trajectory("1", n=120)], path)
    return str(path)


def run_cli(*argv, capsys=None):
    code = main(list(argv))
    return code


class TestStats:
    def test_constant_fixture_std_zero(self, constant_csv, capsys):
        assert main(["stats", "--data", constant_csv]) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.splitlines() if l.startswith("v_l")]
        assert lines, out
        cols = lines[0].split()
        assert float(cols[1]) == 30.0  # mean
        assert float(cols[2]) == 0.0  # std

    def test_stats_csv_artifact(self, constant_csv, tmp_path, capsys):
        out_csv = tmp_path / "stats.csv"
        assert main(["stats", "--data", constant_csv, "--out", str(out_csv)]) == 0
        text = out_csv.read_text()
        assert text.startswith("# config_hash=")
        assert "variable,mean,std,min,max" in text

    def test_json_output(self, constant_csv, capsys):
        assert main(["stats", "--data", constant_csv, "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["n_trajectories"] == 2


class TestIngest:
    def test_round_trip(self, dataset_csv, tmp_path, capsys):
        out = tmp_path / "cleaned.csv"
        assert main(["ingest", "--data", dataset_csv, "--out", str(out)]) == 0
        assert out.exists()
        # cleaned file is ingestible again
        assert main(["stats", "--data", str(out)]) == 0


class TestBacktest:
    def test_idm_beats_persistence_on_idm_data(
        self, dataset_csv, true_params_file, tmp_path, capsys
    ):
        out_dir = str(tmp_path / "out")
        config = tmp_path / "run.toml"
        config.write_text(
            "\n".join(
                [
                    "[data]",
                    f'paths = ["{dataset_csv}"]',
                    "[backtest]",
                    "context = 60",
                    "horizon = 30",
                    "n_samples = 4",
                    "[models.persistence]",
                    "[models.idm]",
                    f'params_file = "{true_params_file}"',
                    "[run]",
                    f'out_dir = "{out_dir}"',
                ]
            )
        )
        assert main(["backtest", "--config", str(config)]) == 0
        summary = json.loads(open(os.path.join(out_dir, "backtest_summary.json")).read())
        means = {r["model"]: r["mean_rmse"] for r in summary["reports"]}
        assert means["idm"] < means["persistence"]
        assert os.path.exists(os.path.join(out_dir, "report_idm.csv"))
        assert os.path.exists(os.path.join(out_dir, "report_persistence.csv"))

    def test_reproducible_byte_identical(self, dataset_csv, tmp_path):
        args = [
            "backtest",
            "--data",
            dataset_csv,
            "--models",
            "persistence,ar,ngram",
            "--context",
            "60",
            "--horizon",
            "30",
            "--n-samples",
            "5",
            "--seed",
            "11",
        ]
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(args + ["--out-dir", out1]) == 0
        assert main(args + ["--out-dir", out2]) == 0
        for name in ("report_persistence.csv", "report_ar.csv", "report_ngram.csv"):
            b1 = open(os.path.join(out1, name), "rb").read()
            b2 = open(os.path.join(out2, name), "rb").read()
            assert b1 == b2

    def test_models_flag_filters_roster(self, dataset_csv, tmp_path, capsys):
        out_dir = str(tmp_path / "out")
        assert (
            main(
                [
                    "backtest",
                    "--data",
                    dataset_csv,
                    "--models",
                    "persistence",
                    "--out-dir",
                    out_dir,
                ]
            )
            == 0
        )
        summary = json.loads(open(os.path.join(out_dir, "backtest_summary.json")).read())
        assert [r["model"] for r in summary["reports"]] == ["persistence"]


class TestCompare:
    def test_improvement_line(self, tmp_path, capsys):
        # crafted summary with the canonical 0.80 vs 0.53 pair
        summary = {
            "reports": [
                {
                    "model": "idm",
                    "mean_rmse": 0.80,
                    "std_rmse": 0.1,
                    "windows": 10,
                    "mae_like": 0.6,
                    "config": {
                        "context_len": 60,
                        "horizon_len": 30,
                        "stride": 30,
                        "expanding": True,
                        "n_samples": 20,
                    },
                },
                {
                    "model": "chronos-ft",
                    "mean_rmse": 0.53,
                    "std_rmse": 0.08,
                    "windows": 10,
                    "mae_like": 0.4,
                    "config": {
                        "context_len": 60,
                        "horizon_len": 30,
                        "stride": 30,
                        "expanding": True,
                        "n_samples": 20,
                    },
                },
            ]
        }
        path = tmp_path / "summary.json"
        path.write_text(json.dumps(summary))
        assert main(["compare", "--summary", str(path), "--reference", "idm"]) == 0
        out = capsys.readouterr().out
        first = [l for l in out.splitlines() if l.startswith("chronos-ft")][0]
        assert "33.75%" in first

    def test_missing_summary_is_single_line_error(self, tmp_path, capsys):
        code = main(["compare", "--summary", str(tmp_path / "none.json")])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error: ConfigError:")
        assert len(err.strip().splitlines()) == 1


class TestTrace:
    def test_writes_trace(self, dataset_csv, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        assert (
            main(
                [
                    "trace",
                    "--data",
                    dataset_csv,
                    "--model",
                    "persistence",
                    "--window",
                    "1",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        lines = out.read_text().splitlines()
        flags = [l.split(",")[1] for l in lines if "," in l and not l.startswith("#")][1:]
        assert flags.count("truth") == 30
        assert flags.count("forecast") == 30


class TestCalibrate:
    def test_calibrate_writes_params(self, dataset_csv, tmp_path, capsys):
        out = tmp_path / "params.txt"
        code = main(
            [
                "calibrate",
                "--data",
                dataset_csv,
                "--budget",
                "400",
                "--out",
                str(out),
                "--convention",
                "treiber2000",
            ]
        )
        assert code == 0
        text = out.read_text()
        assert "a_max" in text and "convention = treiber2000" in text

    def test_calibrate_then_backtest_chain(self, dataset_csv, tmp_path, capsys):
        # the params file written by calibrate (with its meta comments) must
        # feed straight into a backtest roster
        params = tmp_path / "params.txt"
        assert main(["calibrate", "--data", dataset_csv, "--budget", "600", "--out", str(params)]) == 0
        out_dir = str(tmp_path / "out")
        config = tmp_path / "chain.toml"
        config.write_text(
            "\n".join(
                [
                    "[data]",
                    f'paths = ["{dataset_csv}"]',
                    "[models.idm]",
                    f'params_file = "{params}"',
                    "[run]",
                    f'out_dir = "{out_dir}"',
                ]
            )
        )
        assert main(["backtest", "--config", str(config)]) == 0
        summary = json.loads(open(os.path.join(out_dir, "backtest_summary.json")).read())
        assert summary["reports"][0]["model"] == "idm"

    def test_error_exit_and_cleanup(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = main(["backtest", "--data", str(tmp_path / "missing.csv"), "--out-dir", str(out_dir)])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error: ConfigError:")
        assert not (out_dir / "backtest_summary.json").exists()
