"""Command-line interface: subcommands, exit codes, and output files."""
import json

import pytest

from hbonet.cli import main


class TestAnalyze:
    def test_prints_ledger_and_exits_zero(self, capsys):
        rc = main(["analyze", "--preset", "hbonet", "--width", "1.0",
                   "--resolution", "224"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "MFLOPs" in out and "total" in out

    def test_expectation_within_tolerance(self, capsys):
        rc = main(["analyze", "--preset", "hbonet", "--width", "1.0",
                   "--resolution", "224", "--expect-mflops", "305",
                   "--tol", "3"])
        assert rc == 0
        assert "within" in capsys.readouterr().out

    def test_expectation_failure_exits_one(self, capsys):
        rc = main(["analyze", "--preset", "hbonet", "--width", "1.0",
                   "--resolution", "224", "--expect-mflops", "500",
                   "--tol", "3"])
        assert rc == 1
        assert "OUTSIDE" in capsys.readouterr().out

    def test_unknown_preset_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "--preset", "resnet"])
        assert excinfo.value.code == 2

    def test_csv_and_json_outputs(self, tmp_path, capsys):
        csv_path = tmp_path / "ledger.csv"
        json_path = tmp_path / "ledger.json"
        rc = main(["analyze", "--preset", "hbonet", "--width", "0.25",
                   "--resolution", "96", "--csv", str(csv_path),
                   "--json", str(json_path)])
        assert rc == 0
        assert csv_path.read_text().startswith("# format_version=1")
        doc = json.loads(json_path.read_text())
        assert doc["format_version"] == 1 and doc["mflops"] > 0

    def test_variant_flag(self, capsys):
        rc = main(["analyze", "--preset", "hbonet", "--width", "0.25",
                   "--divisor", "8", "--variant", "2", "--resolution", "224",
                   "--expect-mflops", "45", "--tol", "3"])
        assert rc == 0

    def test_custom_spec_file(self, tmp_path, capsys):
        doc = {"format_version": 1, "name": "mini", "stages": [
            {"op": "conv3x3", "c": 8, "n": 1, "s": 2},
            {"op": "hbo", "t": 2, "c": 8, "n": 1, "s": 2},
            {"op": "avgpool"},
            {"op": "classifier"},
        ]}
        path = tmp_path / "mini.json"
        path.write_text(json.dumps(doc))
        rc = main(["analyze", "--spec", str(path), "--resolution", "64",
                   "--num-classes", "4"])
        assert rc == 0

    def test_malformed_spec_exits_two(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format_version": 1, "stages": [
            {"op": "hbo", "c": 8}]}))
        rc = main(["analyze", "--spec", str(path)])
        assert rc == 2
        assert "stage 0" in capsys.readouterr().err


class TestTrace:
    def test_thirteen_stage_rows(self, capsys):
        rc = main(["trace", "--preset", "hbonet", "--width", "1.0"])
        out = capsys.readouterr().out.strip().splitlines()
        assert rc == 0
        assert len(out) == 13
        assert out[0].split() == ["conv1", "112x112x32"]
        assert out[-1].split() == ["classifier", "1x1x1000"]


class TestInfer:
    def test_runs_and_reports_shape(self, capsys):
        rc = main(["infer", "--preset", "hbonet", "--width", "0.25",
                   "--resolution", "96", "--batch", "2", "--num-classes",
                   "10"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "logits shape: (2, 10)" in out


class TestGradcheck:
    def test_passes_at_default_threshold(self, capsys):
        rc = main(["gradcheck", "--seed", "0"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "checks passed" in out

    def test_impossible_threshold_fails(self, capsys):
        rc = main(["gradcheck", "--seed", "0", "--threshold", "1e-18"])
        assert rc == 1


class TestTrainToy:
    def test_tiny_run_writes_csv(self, tmp_path, capsys):
        log_path = tmp_path / "log.csv"
        rc = main(["train-toy", "--epochs", "1", "--samples", "64",
                   "--seed", "0", "--log-csv", str(log_path)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "epoch   0" in out
        assert log_path.read_text().startswith("# format_version=1")


class TestDumpSpec:
    @pytest.mark.parametrize("preset", ["hbonet", "mobilenetv2"])
    def test_emits_valid_stage_table(self, preset, capsys):
        rc = main(["dump-spec", "--preset", preset])
        doc = json.loads(capsys.readouterr().out)
        assert rc == 0
        assert doc["format_version"] == 1
        assert doc["name"] == preset

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0
        out = capsys.readouterr().out
        for sub in ("analyze", "trace", "infer", "gradcheck", "train-toy",
                    "dump-spec"):
            assert sub in out
