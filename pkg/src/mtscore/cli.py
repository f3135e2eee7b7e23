"""Command-line front end: JSON experiment config in, CSV/JSON artifacts out.

Angles in the config are degrees, ranges meters, SNR dB.  Everything inside
the library is radians.

Exit codes: 0 success, 1 numerical failure, 2 parse error, 3 validation
error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .distributions import NoiseSpec, SignalSpec, chi2_isf
from .errors import MTScoreError
from .score_test import DEFAULT_WIDTH_GRID, mt_gqst, select_width
from .simulation import (
    DEFAULT_SNR_GRID,
    DetectorSpec,
    Scenario,
    empirical_sizes,
    evaluate_detectors,
    generate_batch,
    power_curve,
    trial_rng,
)
from .surrogate import ArrayGeometry, LocationParam
from .transform import MTFunction

SCHEMA_VERSION = "1"
MODES = ("size", "power", "width_curve", "single_test")

EXIT_OK, EXIT_NUMERIC, EXIT_PARSE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3, 4


class ParseError(Exception):
    """Malformed config text or an unknown/mistyped field."""


class ValidationError(Exception):
    """A well-formed config value violates a model invariant."""


class IoError(Exception):
    """Reading the config or writing an artifact failed."""


@dataclass(frozen=True)
class ArrayConfig:
    p: int = 8
    spacing: float = 0.25
    wavelength: float = 1.0


@dataclass(frozen=True)
class LocationConfig:
    range: float
    bearing_deg: float


@dataclass(frozen=True)
class NoiseConfig:
    family: str = "gaussian"
    variance: float = 1.0
    shape: float = 0.75


@dataclass(frozen=True)
class DetectorConfig:
    kind: str
    width: float | None = None
    width_mode: str = "per_trial"
    clip_factor: float = 3.0


def _default_detectors() -> tuple[DetectorConfig, ...]:
    return (DetectorConfig("mt_gqst"), DetectorConfig("gqst"), DetectorConfig("zmnl_gqst"))


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "power"
    seed: int = 0
    trials: int = 10_000
    n_snapshots: int = 1000
    alpha: float = 0.01
    snr_db: float = 0.0
    snr_grid: tuple[float, ...] = DEFAULT_SNR_GRID
    width_grid: tuple[float, ...] = DEFAULT_WIDTH_GRID
    hypothesis: str = "h0"
    analytic_trials: int = 50
    threads: int = 1
    output_dir: str = "results"
    array: ArrayConfig = field(default_factory=ArrayConfig)
    theta0: LocationConfig = field(default_factory=lambda: LocationConfig(1.5, 0.0))
    theta1: LocationConfig = field(default_factory=lambda: LocationConfig(1.51, 0.5))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    detectors: tuple[DetectorConfig, ...] = field(default_factory=_default_detectors)

    def scenario(self) -> Scenario:
        return Scenario(
            geom=ArrayGeometry(self.array.p, self.array.spacing, self.array.wavelength),
            theta0=LocationParam.from_degrees(self.theta0.range, self.theta0.bearing_deg),
            theta1=LocationParam.from_degrees(self.theta1.range, self.theta1.bearing_deg),
            noise=NoiseSpec(self.noise.family, self.noise.variance, self.noise.shape),
            signal=SignalSpec(1.0),
            n_snapshots=self.n_snapshots,
            alpha=self.alpha,
            trials=self.trials,
            seed=self.seed,
        ).with_snr(self.snr_db)

    def detector_specs(self) -> list[DetectorSpec]:
        return [
            DetectorSpec(d.kind, d.width, self.width_grid, d.width_mode, d.clip_factor)
            for d in self.detectors
        ]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["snr_grid"] = list(self.snr_grid)
        out["width_grid"] = list(self.width_grid)
        out["detectors"] = [asdict(d) for d in self.detectors]
        return out


@dataclass(frozen=True)
class ResultArtifact:
    path: Path
    format: str
    schema_version: str = SCHEMA_VERSION


# -- parsing ------------------------------------------------------------------

_INT, _FLOAT, _STR = "int", "float", "str"


def _coerce(value: Any, kind: str, where: str):
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{where}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ParseError(f"{where}: expected a finite number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ParseError(f"{where}: expected a string, got {value!r}")
    return value


def _check_keys(obj: Any, allowed: Sequence[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ParseError(
            f"{where}: unknown field(s) {', '.join(map(repr, unknown))}; valid fields are: {', '.join(allowed)}"
        )
    return obj


def _record(cls, obj: Any, where: str, types: dict[str, str], optional: Sequence[str] = ()):
    names = [f.name for f in fields(cls)]
    obj = _check_keys(obj, names, where)
    kwargs = {}
    for name, value in obj.items():
        if value is None and name in optional:
            kwargs[name] = None
        else:
            kwargs[name] = _coerce(value, types[name], f"{where}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def _float_list(value: Any, where: str) -> tuple[float, ...]:
    if not isinstance(value, list) or not value:
        raise ParseError(f"{where}: expected a nonempty list of numbers")
    return tuple(_coerce(v, _FLOAT, f"{where}[{i}]") for i, v in enumerate(value))


def _detectors(value: Any) -> tuple[DetectorConfig, ...]:
    if not isinstance(value, list) or not value:
        raise ParseError("detectors: expected a nonempty list")
    out = []
    types = {"kind": _STR, "width": _FLOAT, "width_mode": _STR, "clip_factor": _FLOAT}
    for i, item in enumerate(value):
        where = f"detectors[{i}]"
        if isinstance(item, str):
            out.append(DetectorConfig(item))
        else:
            out.append(_record(DetectorConfig, item, where, types, optional=("width",)))
    return tuple(out)


_TOP_TYPES = {
    "mode": _STR, "seed": _INT, "trials": _INT, "n_snapshots": _INT, "alpha": _FLOAT,
    "snr_db": _FLOAT, "hypothesis": _STR, "analytic_trials": _INT, "threads": _INT,
    "output_dir": _STR,
}


def parse_config_dict(raw: Any) -> ExperimentConfig:
    """Build and validate a config from decoded JSON."""
    names = [f.name for f in fields(ExperimentConfig)]
    raw = _check_keys(raw, names, "config")
    kwargs: dict[str, Any] = {}
    for name, value in raw.items():
        if name in _TOP_TYPES:
            kwargs[name] = _coerce(value, _TOP_TYPES[name], name)
        elif name in ("snr_grid", "width_grid"):
            kwargs[name] = _float_list(value, name)
        elif name == "array":
            kwargs[name] = _record(ArrayConfig, value, name, {"p": _INT, "spacing": _FLOAT, "wavelength": _FLOAT})
        elif name in ("theta0", "theta1"):
            loc = _record(LocationConfig, value, name, {"range": _FLOAT, "bearing_deg": _FLOAT})
            kwargs[name] = loc
        elif name == "noise":
            kwargs[name] = _record(NoiseConfig, value, name, {"family": _STR, "variance": _FLOAT, "shape": _FLOAT})
        elif name == "detectors":
            kwargs[name] = _detectors(value)
    config = ExperimentConfig(**kwargs)
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    def fail(where: str, exc: Exception):
        raise ValidationError(f"{where}: {exc}") from exc

    if config.mode not in MODES:
        raise ValidationError(f"mode: must be one of {', '.join(MODES)}")
    if config.hypothesis not in ("h0", "h1"):
        raise ValidationError("hypothesis: must be 'h0' or 'h1'")
    if config.threads < 1:
        raise ValidationError("threads: must be >= 1")
    if config.analytic_trials < 1:
        raise ValidationError("analytic_trials: must be >= 1")
    if config.seed < 0:
        raise ValidationError("seed: must be a nonnegative integer")
    for where, loc in (("theta0", config.theta0), ("theta1", config.theta1)):
        try:
            LocationParam.from_degrees(loc.range, loc.bearing_deg)
        except ValueError as exc:
            fail(where, exc)
    try:
        ArrayGeometry(config.array.p, config.array.spacing, config.array.wavelength)
    except ValueError as exc:
        fail("array", exc)
    try:
        NoiseSpec(config.noise.family, config.noise.variance, config.noise.shape)
    except ValueError as exc:
        fail("noise", exc)
    try:
        config.scenario()
    except ValueError as exc:
        fail("scenario", exc)
    if config.mode == "power" and config.theta0 == config.theta1:
        raise ValidationError("theta1: must differ from theta0 for power runs")
    if any(not w > 0 for w in config.width_grid):
        raise ValidationError("width_grid: widths must be positive")
    for i, d in enumerate(config.detectors):
        try:
            DetectorSpec(d.kind, d.width, config.width_grid, d.width_mode, d.clip_factor)
        except ValueError as exc:
            fail(f"detectors[{i}]", exc)
    names = [s.name for s in config.detector_specs()]
    if len(set(names)) != len(names):
        raise ValidationError("detectors: names must be unique")


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config_dict(raw)


# -- emission -----------------------------------------------------------------


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def emit_csv(rows: Sequence[dict], path, header: Sequence[str] | None = None) -> ResultArtifact:
    """Write rows sharing one header as CSV with round-trippable floats."""
    if header is None:
        if not rows:
            raise ValueError("header is required when there are no rows")
        header = list(rows[0])
    header = list(header)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i, row in enumerate(rows):
        if list(row) != header:
            raise ValueError(f"row {i} does not share the header {header}")
        writer.writerow([_format_cell(row[k]) for k in header])
    _atomic_write(Path(path), buf.getvalue())
    return ResultArtifact(Path(path), "csv")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def emit_json(obj: Any, path) -> ResultArtifact:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    _atomic_write(Path(path), text)
    return ResultArtifact(Path(path), "json")


# -- orchestration ------------------------------------------------------------

POWER_HEADER = ["snr_db", "detector", "rejections", "trials", "invalid", "rate", "stderr", "analytic_rate"]
SIZE_HEADER = ["detector", "snr_db", "alpha", "rejections", "trials", "invalid", "rate", "stderr"]


def _run_power(config, scenario, out):
    curve = power_curve(scenario, config.snr_grid, config.detector_specs(), config.threads, config.analytic_trials)
    return [emit_csv(curve.rows(), out / "power_curve.csv", POWER_HEADER)]


def _run_size(config, scenario, out):
    sizes = empirical_sizes(scenario, config.detector_specs(), config.threads)
    rows = [
        {"detector": name, "snr_db": config.snr_db, "alpha": config.alpha, "rejections": est.rejections,
         "trials": est.valid, "invalid": est.invalid, "rate": est.rate, "stderr": est.stderr}
        for name, est in sizes.items()
    ]
    return [emit_csv(rows, out / "size.csv", SIZE_HEADER)]


def _first_batch(config, scenario):
    rng = trial_rng(config.seed, config.hypothesis, 0)
    return generate_batch(rng, scenario.theta(config.hypothesis), scenario)


def _run_width_curve(config, scenario, out):
    batch = _first_batch(config, scenario)
    sel = select_width(batch, scenario.theta0, scenario.geom, config.width_grid)
    rows = [{"omega": w, "spectral_norm": s} for w, s in sel.curve]
    return [emit_csv(rows, out / "width_curve.csv", ["omega", "spectral_norm"])]


def _run_single_test(config, scenario, out):
    batch = _first_batch(config, scenario)
    spec = config.detector_specs()[0]
    if spec.kind == "mt_gqst":
        u = MTFunction.gaussian(spec.width) if spec.width is not None else None
        report = mt_gqst(batch, scenario.theta0, scenario.geom, config.alpha, u, config.width_grid).to_dict()
    else:
        result = evaluate_detectors(batch, scenario, [spec])[0]
        if not result.valid:
            raise MTScoreError(f"{spec.name}: singular score covariance on this batch")
        report = {"statistic": result.statistic, "threshold": chi2_isf(config.alpha, 2), "size": config.alpha,
                  "reject": result.reject, "df": 2, "width": result.width}
    report.update(detector=spec.name, hypothesis=config.hypothesis, seed=config.seed, snr_db=config.snr_db)
    return [emit_json(report, out / "single_test.json")]


_RUNNERS = {"power": _run_power, "size": _run_size, "width_curve": _run_width_curve, "single_test": _run_single_test}


def run_experiment(config: ExperimentConfig) -> list[ResultArtifact]:
    """Execute the configured mode and always emit a run manifest."""
    out = Path(config.output_dir)
    scenario = config.scenario()
    start = time.perf_counter()
    artifacts = _RUNNERS[config.mode](config, scenario, out)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "mode": config.mode,
        "seed": config.seed,
        "wall_time_s": time.perf_counter() - start,
        "artifacts": [str(a.path) for a in artifacts],
        "config": config.to_dict(),
    }
    artifacts.append(emit_json(manifest, out / "run_manifest.json"))
    return artifacts


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtscore",
        description=(
            "Measure-transformed Gaussian quasi score test simulator. The JSON config uses "
            "snake_case fields; bearings are in degrees (bearing_deg), ranges in meters, SNR in dB."
        ),
    )
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--mode", choices=MODES, help="override the config mode")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="worker threads (fallback: $MTSCORE_THREADS)")
    parser.add_argument("--out", help="override the output directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        overrides = config.to_dict()
        if args.mode is not None:
            overrides["mode"] = args.mode
        if args.seed is not None:
            overrides["seed"] = args.seed
        threads = args.threads
        if threads is None and "MTSCORE_THREADS" in os.environ:
            try:
                threads = int(os.environ["MTSCORE_THREADS"])
            except ValueError as exc:
                raise ParseError(f"MTSCORE_THREADS: expected an integer, got {os.environ['MTSCORE_THREADS']!r}") from exc
        if threads is not None:
            overrides["threads"] = threads
        if args.out is not None:
            overrides["output_dir"] = args.out
        config = parse_config_dict(overrides)
        artifacts = run_experiment(config)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IoError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MTScoreError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for art in artifacts:
        print(art.path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
