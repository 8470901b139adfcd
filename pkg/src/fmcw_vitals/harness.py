"""Experiment harness: noise calibration, parameter sweeps and reference sensors.

Noise calibration
-----------------
Receiver noise is fixed once per sweep so that the target's strongest cell
in a single-chirp range-azimuth map has a chosen SNR at a reference
configuration and distance (default: 128 chirps, 128 samples, 0.70 m,
20 dB).  The cell SNR uses the coherent gain of the window and the array,

    SNR = a^2 (sum w)^2 N_rx / (sigma^2 sum w^2),

with ``a`` the echo amplitude at the reference distance.  Other distances
then follow the R^-4 power law with the same noise level.

Sweep CSV columns are listed in :data:`SWEEP_COLUMNS`.  Rates are compared
with the mean rates implied by the ground-truth interval sequences;
variability metrics are compared as percent errors against the same
metrics computed on the ground-truth sequences.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .physio import PhysioProfile, Scenario, synthesize_cube
from .pipeline import (PhaseSeries, PipelineError, PipelineParams, estimate_hr, estimate_rr,
                       process_cube)
from .radar import MapSettings, RadarConfig
from .variability import (InsufficientIntervals, brv_metrics, hrv_metrics, percent_error)

REFERENCE_DISTANCE = 0.70
DEFAULT_SNR_DB = 20.0
HR_FAILURE_BPM = 15.0
MIN_SEEDS = 5
DEFAULT_DISTANCES = tuple(round(0.30 + 0.10 * i, 2) for i in range(13))
DEFAULT_CHIRPS = (32, 64, 96, 128, 192, 256)
GT_SAMPLE_RATE = 50.0
GT_COLUMNS = ("time_s", "resp_raw", "pulse_raw")

_VAR_METRICS = ("sdnn", "rmssd", "pnn50", "mibi", "sdbb", "rmssd_bbi")
SWEEP_COLUMNS = (
    ("axis", "value", "n_seeds", "n_estimated",
     "rr_mae_bpm", "rr_sd_bpm", "hr_mae_bpm", "hr_sd_bpm", "hr_failure_fraction")
    + tuple(f"{m}_pct_err" for m in _VAR_METRICS)
    + ("failed", "seeds")
)


def echo_amplitude(scenario: Scenario, config: RadarConfig) -> float:
    lam = config.wavelength
    return scenario.tx_amplitude * math.sqrt(
        lam ** 2 * scenario.rcs / ((4 * math.pi) ** 3 * scenario.baseline_range ** 4))


def calibrate_noise_sd(snr_db: float = DEFAULT_SNR_DB, config: RadarConfig = RadarConfig(),
                       distance: float = REFERENCE_DISTANCE, rcs: float = 1.0,
                       tx_amplitude: float = 1.0, settings: MapSettings = MapSettings()) -> float:
    """Noise SD giving ``snr_db`` in the target's single-chirp map cell."""
    a = echo_amplitude(Scenario(baseline_range=distance, rcs=rcs, tx_amplitude=tx_amplitude), config)
    w = settings.fast_time_window(config.n_adc_samples)
    signal_gain = a ** 2 * w.sum() ** 2 * config.n_rx ** 2
    noise_gain = config.n_rx * np.sum(w ** 2)
    return float(math.sqrt(signal_gain / noise_gain / 10 ** (snr_db / 10)))


@dataclass(frozen=True)
class RunSettings:
    """Everything a sweep point needs besides its own axis value and seed."""

    duration: float = 120.0
    noise_sd: float = 0.0
    profile: PhysioProfile = field(default_factory=PhysioProfile)
    scenario: Scenario = field(default_factory=Scenario)
    pipeline: PipelineParams = field(default_factory=PipelineParams)


@dataclass(frozen=True)
class RunResult:
    """Outcome of one (parameter point, seed) simulation."""

    key: float
    seed: int
    rr_error: float = math.nan  # absolute, bpm
    hr_error: float = math.nan
    hr_failed: bool = True
    pct_errors: dict = field(default_factory=dict)
    error: str = ""

    @property
    def estimated(self) -> bool:
        return not self.error


def _truth_metrics(gt) -> dict:
    out = {}
    try:
        out.update(vars(hrv_metrics(gt.ibi_seq)))
    except (InsufficientIntervals, ValueError):
        pass
    try:
        out.update(vars(brv_metrics(gt.bbi_seq)[0]))
    except (InsufficientIntervals, ValueError):
        pass
    return out


def run_once(key: float, config: RadarConfig, settings: RunSettings, seed: int) -> RunResult:
    """Simulate and process one record; ``seed`` drives both physiology and noise."""
    profile = replace(settings.profile, seed=seed)
    scenario = replace(settings.scenario, noise_sd=settings.noise_sd)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cube, gt = synthesize_cube(config, scenario, profile, settings.duration, seed, lazy=True)
    try:
        rep = process_cube(cube, settings.pipeline)
    except (PipelineError, ValueError) as exc:
        return RunResult(key, seed, error=str(exc))
    truth = _truth_metrics(gt)
    est = {}
    if rep.hrv is not None:
        est.update(vars(rep.hrv))
    if rep.brv is not None:
        est.update(vars(rep.brv))
    pct = {m: percent_error(est[m], truth[m]) for m in _VAR_METRICS if m in est and m in truth}
    hr_err = abs(rep.hr - gt.true_hr)
    return RunResult(key, seed, rr_error=abs(rep.rr - gt.true_rr), hr_error=hr_err,
                     hr_failed=bool(rep.hr_low_confidence or hr_err > HR_FAILURE_BPM),
                     pct_errors=pct)


@dataclass(frozen=True)
class SweepPoint:
    axis: str
    value: float
    seeds: tuple
    results: tuple

    def summary(self) -> dict:
        ok = [r for r in self.results if r.estimated]
        rr = np.array([r.rr_error for r in ok])
        hr = np.array([r.hr_error for r in ok])

        def mean_sd(x):
            if x.size == 0:
                return math.nan, math.nan
            return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0

        row = {"axis": self.axis, "value": self.value, "n_seeds": len(self.results),
               "n_estimated": len(ok)}
        row["rr_mae_bpm"], row["rr_sd_bpm"] = mean_sd(rr)
        row["hr_mae_bpm"], row["hr_sd_bpm"] = mean_sd(hr)
        row["hr_failure_fraction"] = float(np.mean([r.hr_failed for r in self.results]))
        for m in _VAR_METRICS:
            vals = np.array([r.pct_errors.get(m, math.nan) for r in ok], dtype=float)
            vals = vals[np.isfinite(vals)]
            row[f"{m}_pct_err"] = float(vals.mean()) if vals.size else math.nan
        row["failed"] = not ok
        row["seeds"] = " ".join(str(s) for s in self.seeds)
        return row


@dataclass(frozen=True)
class SweepResult:
    axis: str
    points: tuple  # of SweepPoint, sorted by value

    def rows(self) -> list[dict]:
        return [p.summary() for p in self.points]

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows()], dtype=float)


def _run_job(job):
    return run_once(*job)


def run_sweep(axis: str, points: Sequence[tuple], seeds: Iterable[int],
              settings: RunSettings, jobs: int = 1) -> SweepResult:
    """Run every (point, seed) pair and aggregate per point.

    ``points`` holds ``(value, config, scenario)`` triples.  Jobs are
    independent; results are keyed by (value, seed) and sorted, so the
    outcome does not depend on ``jobs`` or completion order.
    """
    seeds = tuple(sorted(set(int(s) for s in seeds)))
    if len(seeds) < MIN_SEEDS:
        raise ValueError(f"each sweep point needs at least {MIN_SEEDS} distinct seeds")
    work = [(float(value), cfg, replace(settings, scenario=scen), s)
            for value, cfg, scen in points for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = [_run_job(w) for w in work]
    by_key: dict[float, list] = {}
    for r in results:
        by_key.setdefault(r.key, []).append(r)
    out = tuple(SweepPoint(axis, value, seeds, tuple(sorted(by_key[value], key=lambda r: r.seed)))
                for value in sorted(by_key))
    return SweepResult(axis, out)


def _calibrated(settings: RunSettings, config: RadarConfig, snr_db: float,
                noise_sd: Optional[float]) -> RunSettings:
    if noise_sd is not None:
        return replace(settings, noise_sd=float(noise_sd))
    if math.isinf(snr_db) and snr_db > 0:
        return replace(settings, noise_sd=0.0)
    sc = settings.scenario
    sd = calibrate_noise_sd(snr_db, config, REFERENCE_DISTANCE, sc.rcs, sc.tx_amplitude,
                            settings.pipeline.selection.map)
    return replace(settings, noise_sd=sd)


def sweep_distance(distances: Sequence[float] = DEFAULT_DISTANCES, seeds: Iterable[int] = range(10),
                   config: RadarConfig = RadarConfig(), snr_db: float = DEFAULT_SNR_DB,
                   settings: Optional[RunSettings] = None, jobs: int = 1,
                   noise_sd: Optional[float] = None) -> SweepResult:
    """Estimation error versus subject distance at one fixed noise level.

    Noise is calibrated at 0.70 m for ``config`` (or given directly as
    ``noise_sd``) and then held, so farther points lose SNR as R^-4.
    """
    if len(distances) < 2:
        raise ValueError("a distance sweep needs at least two distances")
    settings = _calibrated(settings or RunSettings(), config, snr_db, noise_sd)
    points = [(d, config, replace(settings.scenario, baseline_range=float(d))) for d in distances]
    return run_sweep("distance_m", points, seeds, settings, jobs)


def sweep_chirps(chirps: Sequence[int] = DEFAULT_CHIRPS, seeds: Iterable[int] = range(10),
                 config: RadarConfig = RadarConfig(), snr_db: float = DEFAULT_SNR_DB,
                 settings: Optional[RunSettings] = None, paper_mode: bool = False,
                 jobs: int = 1, noise_sd: Optional[float] = None) -> SweepResult:
    """Estimation error versus chirps per frame at the reference distance.

    Noise is calibrated once on ``config`` and shared by every point.  With
    ``paper_mode`` the 256-chirp point also drops to 64 samples per chirp.
    """
    if any(int(n) < 8 for n in chirps):
        raise ValueError("chirp counts must be >= 8")
    settings = _calibrated(settings or RunSettings(), config, snr_db, noise_sd)
    scen = replace(settings.scenario, baseline_range=REFERENCE_DISTANCE)
    points = []
    for n in chirps:
        cfg = config.replace(n_chirps=int(n))
        if paper_mode and int(n) >= 256:
            cfg = cfg.replace(n_adc_samples=64)
        points.append((int(n), cfg, scen))
    return run_sweep("n_chirps", points, seeds, settings, jobs)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in result.rows():
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_sweep_csv(csv_path, svg_path) -> None:
    """MAE +/- SD of RR and HR against the sweep axis, read back from the CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_sweep_csv(csv_path)
    x = np.array([float(r["value"]) for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, rate in zip(axes, ("rr", "hr")):
        y = np.array([float(r[f"{rate}_mae_bpm"]) for r in rows])
        e = np.array([float(r[f"{rate}_sd_bpm"]) for r in rows])
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3)
        ax.set_xlabel(rows[0]["axis"] if rows else "")
        ax.set_ylabel(f"{rate.upper()} MAE (bpm)")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


class GroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceVitals:
    rr: float
    hr: float
    bbi: np.ndarray
    ibi: np.ndarray


def read_ground_truth_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a reference-sensor CSV into (time, respiration, pulse) arrays.

    Row numbers in errors count the header as row 1.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(GT_COLUMNS):
            raise GroundTruthError(f"row 1: expected header {','.join(GT_COLUMNS)}")
        rows = []
        for i, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise GroundTruthError(f"row {i}: expected 3 fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                raise GroundTruthError(f"row {i}: non-numeric field") from None
            if len(rows) > 1 and not rows[-1][0] > rows[-2][0]:
                raise GroundTruthError(f"row {i}: timestamps not strictly increasing")
    if len(rows) < 2:
        raise GroundTruthError("fewer than two samples")
    a = np.array(rows)
    return a[:, 0], a[:, 1], a[:, 2]


def ingest_ground_truth(path) -> ReferenceVitals:
    """Reference RR/HR and interval lists from belt and pulse sensor channels."""
    t, resp, pulse = read_ground_truth_csv(path)
    fs = (t.size - 1) / (t[-1] - t[0])
    if abs(fs - GT_SAMPLE_RATE) > 0.01 * GT_SAMPLE_RATE:
        raise GroundTruthError(f"sample rate {fs:.3f} Hz is not within 1% of 50 Hz")
    try:
        rr = estimate_rr(PhaseSeries(resp, fs, (0, 0)))
    except PipelineError:
        raise GroundTruthError("fewer than 2 peaks in channel resp_raw") from None
    hr = estimate_hr(PhaseSeries(pulse, fs, (0, 0)), None)
    if hr.peak_times.size < 2:
        raise GroundTruthError("fewer than 2 peaks in channel pulse_raw")
    return ReferenceVitals(rr.value, hr.value, rr.intervals, hr.intervals)
