"""Monte Carlo harness for near-field location-mismatch detection.

Snapshots follow ``X_n = S_n a(theta) + nu_n Z_n`` with BPSK symbols ``S_n``,
complex Gaussian ``Z_n`` and a texture ``nu_n`` that is 1 for Gaussian noise
and K-distributed otherwise.  Every trial draws from its own stream keyed by
``(seed, hypothesis, trial)``, so results do not depend on scheduling or on
the number of worker threads.  Trial keys do not involve the SNR, which gives
common random numbers along a power curve.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .distributions import (
    NoiseSpec,
    SignalSpec,
    asymptotic_power,
    chi2_isf,
    sample_bpsk,
    sample_complex_gaussian,
    sample_k_texture,
)
from .errors import MTScoreError, NoAdmissibleWidth, SingularFHat, SingularGHat
from .score_test import (
    DEFAULT_WIDTH_GRID,
    curvature,
    normalized_score,
    quadratic_statistic,
    sandwich,
    score_covariance,
    select_width_from_ingredients,
)
from .surrogate import ArrayGeometry, LocationParam, batch_score_ingredients, steering_vector
from .transform import as_batch

__all__ = [
    "Scenario",
    "DetectorSpec",
    "TrialResult",
    "RateEstimate",
    "PowerCurve",
    "trial_rng",
    "generate_batch",
    "zmnl_clip",
    "evaluate_detectors",
    "run_trial",
    "empirical_size",
    "empirical_sizes",
    "power_curve",
    "DEFAULT_SNR_GRID",
]

DEFAULT_SNR_GRID = tuple(float(s) for s in range(-10, 11, 2))
_HYPOTHESIS_KEY = {"h0": 0, "h1": 1}


@dataclass(frozen=True)
class Scenario:
    geom: ArrayGeometry = field(default_factory=ArrayGeometry)
    theta0: LocationParam = field(default_factory=lambda: LocationParam(1.5, 0.0))
    theta1: LocationParam = field(default_factory=lambda: LocationParam.from_degrees(1.51, 0.5))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    signal: SignalSpec = field(default_factory=SignalSpec)
    n_snapshots: int = 1000
    alpha: float = 0.01
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.n_snapshots < 1:
            raise ValueError("snapshot count must be >= 1")
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("test size alpha must lie in (0, 1)")

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.signal.variance / self.noise.variance)

    def with_snr(self, snr_db: float) -> "Scenario":
        variance = self.noise.variance * 10.0 ** (snr_db / 10.0)
        return replace(self, signal=replace(self.signal, variance=variance))

    def theta(self, hypothesis: str) -> LocationParam:
        if hypothesis == "h0":
            return self.theta0
        if hypothesis == "h1":
            return self.theta1
        raise ValueError(f"hypothesis must be 'h0' or 'h1', got {hypothesis!r}")


@dataclass(frozen=True)
class DetectorSpec:
    """One detector of the comparison.

    ``mt_gqst`` uses a fixed Gaussian ``width`` when given, otherwise picks the
    width from ``grid`` on each trial's own batch (or once, on trial 0, with
    ``width_mode="select_once"``).  ``zmnl_gqst`` clips snapshot norms at
    ``clip_factor`` times the batch median before the plain test.
    """

    kind: Literal["mt_gqst", "gqst", "zmnl_gqst"] = "mt_gqst"
    width: float | None = None
    grid: tuple[float, ...] = DEFAULT_WIDTH_GRID
    width_mode: Literal["per_trial", "select_once"] = "per_trial"
    clip_factor: float = 3.0

    def __post_init__(self):
        if self.kind not in ("mt_gqst", "gqst", "zmnl_gqst"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.width is not None and not self.width > 0:
            raise ValueError("detector width must be positive")
        if self.width is not None and self.kind != "mt_gqst":
            raise ValueError("only mt_gqst takes a width")
        if self.width_mode not in ("per_trial", "select_once"):
            raise ValueError(f"unknown width mode {self.width_mode!r}")
        if not self.clip_factor > 0:
            raise ValueError("clip factor must be positive")
        if not self.grid or any(not w > 0 for w in self.grid):
            raise ValueError("width grid must be nonempty with positive widths")
        object.__setattr__(self, "grid", tuple(float(w) for w in self.grid))

    @property
    def name(self) -> str:
        if self.kind == "mt_gqst" and self.width is not None:
            return f"mt_gqst[w={self.width:g}]"
        return self.kind

    @property
    def data_driven(self) -> bool:
        return self.kind == "mt_gqst" and self.width is None


@dataclass(frozen=True)
class TrialResult:
    reject: bool | None
    statistic: float
    width: float | str | None = None
    r_hat: np.ndarray | None = None

    @property
    def valid(self) -> bool:
        return self.reject is not None


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    stderr: float
    rejections: int
    valid: int
    invalid: int

    @classmethod
    def from_counts(cls, rejections: int, valid: int, invalid: int) -> "RateEstimate":
        rate = rejections / valid if valid else math.nan
        stderr = math.sqrt(rate * (1.0 - rate) / valid) if valid else math.nan
        return cls(rate, stderr, rejections, valid, invalid)


@dataclass
class PowerCurve:
    snr_db: list[float]
    detectors: list[str]
    estimates: dict[str, list[RateEstimate]]
    analytic: dict[str, list[float]]
    widths: dict[str, list[float]] = field(default_factory=dict)

    def rates(self, detector: str) -> np.ndarray:
        return np.array([e.rate for e in self.estimates[detector]])

    def stderrs(self, detector: str) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates[detector]])

    def rows(self) -> list[dict]:
        out = []
        for i, snr in enumerate(self.snr_db):
            for name in self.detectors:
                est = self.estimates[name][i]
                out.append({
                    "snr_db": snr,
                    "detector": name,
                    "rejections": est.rejections,
                    "trials": est.valid,
                    "invalid": est.invalid,
                    "rate": est.rate,
                    "stderr": est.stderr,
                    "analytic_rate": self.analytic[name][i],
                })
        return out


def trial_rng(seed: int, hypothesis: str, trial: int) -> np.random.Generator:
    """Independent stream for one trial, derived from its coordinates only."""
    key = (_HYPOTHESIS_KEY[hypothesis], int(trial))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def generate_batch(rng: np.random.Generator, theta: LocationParam, scenario: Scenario) -> np.ndarray:
    """Draw ``N`` snapshots ``S_n a(theta) + nu_n Z_n`` as an ``(N, p)`` array."""
    n, p = scenario.n_snapshots, scenario.geom.p
    a = steering_vector(theta, scenario.geom)
    s = sample_bpsk(rng, scenario.signal.variance, n)
    z = sample_complex_gaussian(rng, p, scenario.noise.variance, n)
    if scenario.noise.family == "k_dist":
        z *= sample_k_texture(rng, scenario.noise.shape, n)[:, None]
    return s[:, None] * a[None, :] + z


def zmnl_clip(batch, clip_factor: float = 3.0, threshold: float | None = None) -> np.ndarray:
    """Clip each snapshot's norm at ``threshold``, preserving its direction.

    The default threshold is ``clip_factor`` times the median snapshot norm.
    """
    batch = as_batch(batch)
    norms = np.sqrt(np.sum(batch.real**2 + batch.imag**2, axis=1))
    if threshold is None:
        threshold = clip_factor * float(np.median(norms))
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(norms > threshold, threshold / norms, 1.0)
    return batch * gain[:, None]


def _plain_trial(psi, gamma, threshold) -> TrialResult:
    u = np.ones(psi.shape[0])
    return _weighted_trial(u, psi, gamma, threshold, "constant")


def _weighted_trial(w, psi, gamma, threshold, width) -> TrialResult:
    g = score_covariance(w, psi)
    try:
        stat = quadratic_statistic(normalized_score(w, psi), g)
    except SingularGHat:
        return TrialResult(None, math.nan, width)
    try:
        r = sandwich(curvature(w, gamma), g)
    except SingularFHat:
        r = None
    return TrialResult(bool(stat > threshold), stat, width, r)


def evaluate_detectors(
    batch,
    scenario: Scenario,
    detectors: Sequence[DetectorSpec],
    fixed_widths: dict[str, float] | None = None,
) -> list[TrialResult]:
    """Apply every detector to one batch, sharing the score ingredients."""
    batch = as_batch(batch)
    threshold = chi2_isf(scenario.alpha, 2)
    theta0, geom = scenario.theta0, scenario.geom
    psi, gamma = batch_score_ingredients(batch, theta0, geom)
    sq_norms = np.sum(batch.real**2 + batch.imag**2, axis=1)
    fixed_widths = fixed_widths or {}
    results = []
    for det in detectors:
        if det.kind == "gqst":
            results.append(_plain_trial(psi, gamma, threshold))
        elif det.kind == "zmnl_gqst":
            clipped = zmnl_clip(batch, det.clip_factor)
            cpsi, cgamma = batch_score_ingredients(clipped, theta0, geom)
            results.append(_plain_trial(cpsi, cgamma, threshold))
        else:
            width = det.width if det.width is not None else fixed_widths.get(det.name)
            if width is None:
                try:
                    width = select_width_from_ingredients(psi, gamma, sq_norms, det.grid).width
                except NoAdmissibleWidth:
                    results.append(TrialResult(None, math.nan, None))
                    continue
            log_u = -sq_norms / width**2
            w = np.exp(log_u - np.max(log_u))
            results.append(_weighted_trial(w, psi, gamma, threshold, width))
    return results


def run_trial(
    rng: np.random.Generator,
    scenario: Scenario,
    detector: DetectorSpec,
    hypothesis: str,
) -> bool | None:
    """One batch, one decision.  ``None`` marks an invalid (singular) trial."""
    batch = generate_batch(rng, scenario.theta(hypothesis), scenario)
    return evaluate_detectors(batch, scenario, [detector])[0].reject


def _once_widths(scenario, detectors, hypothesis) -> dict[str, float]:
    widths = {}
    pending = [d for d in detectors if d.data_driven and d.width_mode == "select_once"]
    if pending:
        batch = generate_batch(trial_rng(scenario.seed, hypothesis, 0), scenario.theta(hypothesis), scenario)
        psi, gamma = batch_score_ingredients(batch, scenario.theta0, scenario.geom)
        sq = np.sum(np.abs(batch) ** 2, axis=1)
        for d in pending:
            widths[d.name] = select_width_from_ingredients(psi, gamma, sq, d.grid).width
    return widths


def _run_chunk(scenario, detectors, hypothesis, trials, fixed_widths) -> list[list[TrialResult]]:
    theta = scenario.theta(hypothesis)
    out = []
    for t in trials:
        batch = generate_batch(trial_rng(scenario.seed, hypothesis, t), theta, scenario)
        try:
            out.append(evaluate_detectors(batch, scenario, detectors, fixed_widths))
        except MTScoreError as exc:
            raise type(exc)(f"{exc} (hypothesis={hypothesis}, trial={t}, snr_db={scenario.snr_db:.6g})") from exc
    return out


def _run_trials(
    scenario: Scenario,
    detectors: Sequence[DetectorSpec],
    hypothesis: str,
    threads: int = 1,
) -> list[list[TrialResult]]:
    """Results indexed ``[trial][detector]`` in trial order."""
    fixed = _once_widths(scenario, detectors, hypothesis)
    trials = range(scenario.trials)
    threads = max(1, int(threads))
    if threads == 1:
        return _run_chunk(scenario, detectors, hypothesis, trials, fixed)
    bounds = np.linspace(0, scenario.trials, 4 * threads + 1).astype(int)
    chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: _run_chunk(scenario, detectors, hypothesis, c, fixed), chunks))
    return [row for part in parts for row in part]


def _estimate(results: list[list[TrialResult]], j: int) -> RateEstimate:
    col = [row[j] for row in results]
    valid = [r for r in col if r.valid]
    return RateEstimate.from_counts(sum(r.reject for r in valid), len(valid), len(col) - len(valid))


def empirical_sizes(scenario: Scenario, detectors: Sequence[DetectorSpec], threads: int = 1) -> dict[str, RateEstimate]:
    results = _run_trials(scenario, detectors, "h0", threads)
    return {d.name: _estimate(results, j) for j, d in enumerate(detectors)}


def empirical_size(scenario: Scenario, detector: DetectorSpec, threads: int = 1) -> RateEstimate:
    """Rejection rate over ``scenario.trials`` null trials at the scenario SNR."""
    return empirical_sizes(scenario, [detector], threads)[detector.name]


def _analytic(results, j, scenario, count) -> float:
    mats = [row[j].r_hat for row in results if row[j].r_hat is not None][:count]
    if not mats:
        return math.nan
    h = math.sqrt(scenario.n_snapshots) * (scenario.theta1.as_array() - scenario.theta0.as_array())
    try:
        return asymptotic_power(h, np.mean(mats, axis=0), 2, scenario.alpha)
    except MTScoreError:
        return math.nan


def power_curve(
    scenario: Scenario,
    snr_grid: Sequence[float] = DEFAULT_SNR_GRID,
    detectors: Sequence[DetectorSpec] = (DetectorSpec("mt_gqst"), DetectorSpec("gqst"), DetectorSpec("zmnl_gqst")),
    threads: int = 1,
    analytic_trials: int = 50,
) -> PowerCurve:
    """Empirical power under ``theta1`` at each SNR, plus the local-power prediction.

    The prediction uses ``h = sqrt(N) (theta1 - theta0)`` and ``R_hat`` averaged
    over the first ``analytic_trials`` valid trials of each detector.
    """
    if not snr_grid or not detectors:
        raise ValueError("SNR grid and detector list must be nonempty")
    names = [d.name for d in detectors]
    if len(set(names)) != len(names):
        raise ValueError("detector names must be unique")
    curve = PowerCurve(
        snr_db=[float(s) for s in snr_grid],
        detectors=names,
        estimates={n: [] for n in names},
        analytic={n: [] for n in names},
        widths={n: [] for n in names},
    )
    for snr in snr_grid:
        sc = scenario.with_snr(snr)
        results = _run_trials(sc, detectors, "h1", threads)
        for j, name in enumerate(names):
            curve.estimates[name].append(_estimate(results, j))
            curve.analytic[name].append(_analytic(results, j, sc, analytic_trials))
            ws = [row[j].width for row in results if isinstance(row[j].width, float)]
            curve.widths[name].append(float(np.median(ws)) if ws else math.nan)
    return curve
