import csv
import json
import math
import struct

import pytest

from mtscore import cli
from mtscore.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_VALIDATION,
    ExperimentConfig,
    ParseError,
    ValidationError,
    emit_csv,
    main,
    parse_config,
    parse_config_dict,
    run_experiment,
)
from mtscore.score_test import DEFAULT_WIDTH_GRID


def write_config(tmp_path, obj, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


class TestParse:
    def test_empty_gives_defaults(self):
        cfg = parse_config_dict({})
        sc = cfg.scenario()
        assert (sc.geom.p, sc.geom.spacing, sc.geom.wavelength) == (8, 0.25, 1.0)
        assert (sc.n_snapshots, sc.alpha, sc.trials) == (1000, 0.01, 10_000)
        assert sc.noise.shape == 0.75
        assert sc.theta0.range == 1.5 and sc.theta0.bearing == 0.0
        assert sc.theta1.range == 1.51 and sc.theta1.bearing == pytest.approx(math.radians(0.5))
        assert cfg.width_grid[0] == 1.0 and cfg.width_grid[-1] == 30.0 and len(cfg.width_grid) == 59

    def test_negative_range(self):
        with pytest.raises(ValidationError, match="range must be positive"):
            parse_config_dict({"theta0": {"range": -1.0, "bearing_deg": 0.0}})

    def test_unknown_field_lists_valid_names(self):
        with pytest.raises(ParseError) as info:
            parse_config_dict({"sigma": 1.0})
        assert "sigma" in str(info.value)
        assert "n_snapshots" in str(info.value) and "detectors" in str(info.value)

    @pytest.mark.parametrize(
        "raw",
        [{"trials": 1.5}, {"alpha": "small"}, {"seed": True}, {"snr_grid": []}, {"noise": {"shape": None}}, [1, 2]],
    )
    def test_type_errors(self, raw):
        with pytest.raises(ParseError):
            parse_config_dict(raw)

    @pytest.mark.parametrize(
        "raw",
        [
            {"mode": "roc"},
            {"alpha": 1.5},
            {"noise": {"family": "k_dist", "shape": -1.0}},
            {"theta1": {"range": 1.5, "bearing_deg": 0.0}},
            {"detectors": ["gqst", "gqst"]},
            {"width_grid": [1.0, 0.0]},
        ],
    )
    def test_validation_errors(self, raw):
        with pytest.raises(ValidationError):
            parse_config_dict(raw)

    def test_round_trip(self):
        cfg = parse_config_dict({
            "mode": "size", "seed": 9, "snr_db": -3.0, "noise": {"family": "k_dist", "shape": 0.5},
            "detectors": [{"kind": "mt_gqst", "width": 4.0}, "gqst", {"kind": "zmnl_gqst", "clip_factor": 2.5}],
        })
        assert parse_config_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
        assert parse_config_dict(ExperimentConfig().to_dict()) == ExperimentConfig()

    def test_bad_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "seed": 1,\n  "trials": \n}')
        with pytest.raises(ParseError, match="line 4"):
            parse_config(path)


class TestEmitCsv:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv([], path, ["a", "b"])
        assert path.read_bytes() == b"a,b\n"

    def test_float_round_trip(self, tmp_path):
        values = [0.1, 1 / 3, math.pi * 1e-300, 2.0**-1074, 1.7976931348623157e308, -0.0]
        path = tmp_path / "f.csv"
        emit_csv([{"x": v} for v in values], path)
        with open(path, newline="") as fh:
            parsed = [float(row["x"]) for row in csv.DictReader(fh)]
        assert [struct.pack("<d", v) for v in parsed] == [struct.pack("<d", v) for v in values]

    def test_quoting_and_line_endings(self, tmp_path):
        path = tmp_path / "q.csv"
        emit_csv([{"name": "a,b", "note": 'say "hi"'}], path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw == b'name,note\n"a,b","say ""hi"""\n'

    def test_mismatched_rows(self, tmp_path):
        with pytest.raises(ValueError):
            emit_csv([{"a": 1}, {"b": 2}], tmp_path / "x.csv")

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(cli.IoError):
            emit_csv([{"a": 1}], blocker / "sub" / "x.csv")


class TestRun:
    def test_width_curve(self, tmp_path):
        cfg = parse_config_dict({
            "mode": "width_curve", "seed": 3, "noise": {"family": "k_dist"}, "output_dir": str(tmp_path),
        })
        run_experiment(cfg)
        with open(tmp_path / "width_curve.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 59
        assert [float(r["omega"]) for r in rows] == list(DEFAULT_WIDTH_GRID)
        manifest = json.loads((tmp_path / "run_manifest.json").read_text())
        assert manifest["seed"] == 3 and "wall_time_s" in manifest
        assert parse_config_dict(manifest["config"]) == cfg

    def test_single_test_calibration(self, tmp_path):
        accepted = 0
        for seed in range(100):
            out = tmp_path / str(seed)
            run_experiment(parse_config_dict({"mode": "single_test", "seed": seed, "output_dir": str(out)}))
            report = json.loads((out / "single_test.json").read_text())
            assert report["reject"] == (report["statistic"] > report["threshold"])
            accepted += not report["reject"]
        assert accepted >= 98

    def test_power_csv_and_rerun_identical(self, tmp_path):
        base = {"mode": "power", "trials": 30, "snr_grid": [-4.0, 0.0], "analytic_trials": 5}
        for name in ("a", "b"):
            run_experiment(parse_config_dict({**base, "output_dir": str(tmp_path / name)}))
        first = (tmp_path / "a" / "power_curve.csv").read_bytes()
        assert first == (tmp_path / "b" / "power_curve.csv").read_bytes()
        header = first.decode().splitlines()[0].split(",")
        assert header == ["snr_db", "detector", "rejections", "trials", "invalid", "rate", "stderr", "analytic_rate"]
        assert len(first.decode().splitlines()) == 1 + 2 * 3

    def test_size_csv(self, tmp_path):
        run_experiment(parse_config_dict({"mode": "size", "trials": 20, "detectors": ["gqst"], "output_dir": str(tmp_path)}))
        with open(tmp_path / "size.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and rows[0]["detector"] == "gqst" and int(rows[0]["trials"]) == 20


class TestMain:
    def test_success(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"mode": "single_test"})
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "4"]) == EXIT_OK
        report = json.loads((tmp_path / "o" / "single_test.json").read_text())
        assert report["seed"] == 4
        assert "single_test.json" in capsys.readouterr().out

    def test_exit_codes(self, tmp_path):
        assert main(["--config", str(write_config(tmp_path, {"sigma": 1}, "p.json"))]) == EXIT_PARSE
        bad = {"theta0": {"range": -1.0, "bearing_deg": 0.0}}
        assert main(["--config", str(write_config(tmp_path, bad, "v.json"))]) == EXIT_VALIDATION
        assert main(["--config", str(tmp_path / "missing.json")]) == EXIT_IO
        assert len({EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_IO}) == 4

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MTSCORE_THREADS", "3")
        cfg = write_config(tmp_path, {"mode": "size", "trials": 10, "detectors": ["gqst"]})
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        manifest = json.loads((tmp_path / "o" / "run_manifest.json").read_text())
        assert manifest["config"]["threads"] == 3
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o2"), "--threads", "2"]) == EXIT_OK
        assert json.loads((tmp_path / "o2" / "run_manifest.json").read_text())["config"]["threads"] == 2
        monkeypatch.setenv("MTSCORE_THREADS", "many")
        assert main(["--config", str(cfg), "--out", str(tmp_path / "o3")]) == EXIT_PARSE

    def test_missing_config_flag(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2
