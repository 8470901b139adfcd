"""Vital-sign estimation from a radar data cube.

Chain: pick the range-azimuth cell with the best mix of across-chirp phase
variability and power, average that cell over each frame's chirps, unwrap
the slow-time phase, then

* respiration: 0.1-0.5 Hz band-pass, Hilbert envelope, peak intervals;
* heartbeat: notch the breathing fundamental and its sub-band harmonics,
  0.9-3.0 Hz band-pass, zero-padded DFT peak, plus peak intervals for HRV.

All filters run forward-backward (zero phase).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal

from .radar import DataCube, MapSettings, bin_weights, fft_1d, frame_maps, next_pow2, range_bin_width
from .variability import (BrvReport, HrvReport, InsufficientIntervals, brv_metrics,
                          hrv_metrics)

RESP_BAND = (0.1, 0.5)
CARDIAC_BAND = (0.9, 3.0)


class PipelineError(RuntimeError):
    """Estimation could not produce a result from the given data."""


@dataclass(frozen=True)
class BinSelectionParams:
    """Feasible window, power threshold and metric weights for bin selection.

    ``power_threshold_db`` is relative: cells whose chirp-averaged power is
    more than this many dB below the strongest cell in the window are
    dropped.  ``noise_guard_db`` additionally drops cells within that many
    dB of the window's median power (the noise floor); ``None`` disables it.
    """

    r_min: float = 0.25
    r_max: float = 2.0
    power_threshold_db: float = 25.0
    noise_guard_db: Optional[float] = 6.0
    w1: float = 0.7
    w2: float = 0.3
    circular: bool = True
    map: MapSettings = field(default_factory=MapSettings)

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or not math.isclose(self.w1 + self.w2, 1.0, abs_tol=1e-9):
            raise ValueError("weights must be non-negative and sum to 1")
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be below r_max")


@dataclass(frozen=True)
class BinSelection:
    range_bin: int
    azimuth_bin: int
    score: np.ndarray = field(repr=False)
    sigma_phi: np.ndarray = field(repr=False)
    p_log: np.ndarray = field(repr=False)
    feasible: np.ndarray = field(repr=False)

    @property
    def cell(self) -> tuple[int, int]:
        return self.range_bin, self.azimuth_bin


@dataclass(frozen=True)
class PhaseSeries:
    samples: np.ndarray
    rate: float
    selected_bin: tuple[int, int]

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


@dataclass(frozen=True)
class RateEstimate:
    value: float  # per minute
    band: tuple[float, float]
    intervals: np.ndarray
    peak_times: np.ndarray = field(repr=False)
    filtered: np.ndarray = field(repr=False)
    envelope: Optional[np.ndarray] = field(default=None, repr=False)
    low_confidence: bool = False
    peak_snr_db: Optional[float] = None


@dataclass(frozen=True)
class EstimatorParams:
    filter_order: int = 4
    notch_q: float = 8.0
    prominence_iqr: float = 0.3
    interpolate_peaks: bool = True
    fft_oversample: int = 8
    low_confidence_db: float = 3.0
    # beat peaks closer than this fraction of the spectral period are merged
    refractory_fraction: float = 0.6


def circular_std(phases_or_unit, axis=0):
    """``sqrt(-2 ln R)`` with R the mean resultant length of unit phasors."""
    u = np.asarray(phases_or_unit)
    if not np.iscomplexobj(u):
        u = np.exp(1j * u)
    r = np.abs(np.mean(u, axis=axis))
    return np.sqrt(-2.0 * np.log(np.clip(r, 1e-300, 1.0)))


def _minmax(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    lo, hi = x[mask].min(), x[mask].max()
    # spreads at complex64 round-off level carry no information
    if hi - lo > 1e-5 * max(1.0, abs(hi), abs(lo)):
        out[mask] = (x[mask] - lo) / (hi - lo)
    return out


def select_bin(cube: DataCube, frame: int = 0,
               params: BinSelectionParams = BinSelectionParams()) -> BinSelection:
    """Choose the range-azimuth cell that best tracks chest motion in one frame.

    Over the feasible cells (inside ``[r_min, r_max]``, within
    ``power_threshold_db`` of the strongest cell and above the noise guard)
    the score is ``w1 * sigma_phi + w2 * P_log`` with both metrics min-max
    normalised over the feasible set.  ``sigma_phi`` is the across-chirp
    phase spread (circular SD by default, sample SD of the raw angles with
    ``circular=False``) and ``P_log`` the log of the chirp-averaged power.

    Raises
    ------
    PipelineError
        "no feasible bins" when the feasible set is empty.
    """
    cfg = cube.config
    maps = frame_maps(cube, frame, params.map)  # (chirp, range, azimuth)
    n_r = maps.shape[1]
    width = range_bin_width(cfg, params.map)
    r = np.arange(n_r) * width
    in_window = (r >= params.r_min - 1e-12) & (r <= params.r_max + 1e-12) & (np.arange(n_r) < n_r // 2)

    power = np.mean(np.abs(maps) ** 2, axis=0)
    window_mask = in_window[:, None] & np.ones(maps.shape[2], dtype=bool)[None, :]
    peak = power[window_mask].max() if window_mask.any() else 0.0
    if not peak > 0:
        raise PipelineError("no feasible bins")
    feasible = window_mask & (power >= peak * 10 ** (-params.power_threshold_db / 10)) & (power > 0)
    if params.noise_guard_db is not None:
        floor = np.median(power[window_mask])
        feasible &= power > floor * 10 ** (params.noise_guard_db / 10)
    if not feasible.any():
        raise PipelineError("no feasible bins")

    with np.errstate(divide="ignore", invalid="ignore"):
        if params.circular:
            sigma = circular_std(maps / np.abs(maps), axis=0)
        else:
            sigma = np.std(np.angle(maps), axis=0, ddof=1) if cfg.n_chirps > 1 else np.zeros(power.shape)
        p_log = np.log(power)
    sigma = np.where(feasible, sigma, 0.0)
    p_log = np.where(feasible, p_log, 0.0)
    score = params.w1 * _minmax(sigma, feasible) + params.w2 * _minmax(p_log, feasible)
    score = np.where(feasible, score, -np.inf)
    rb, ab = np.unravel_index(np.argmax(score), score.shape)
    return BinSelection(int(rb), int(ab), score, sigma, p_log, feasible)


def select_bin_by_vote(cube: DataCube, params: BinSelectionParams = BinSelectionParams(),
                       every: int = 30) -> tuple[int, int]:
    """Re-run :func:`select_bin` every ``every`` frames and keep the most common cell."""
    votes = Counter()
    for k in range(0, cube.n_frames, every):
        try:
            votes[select_bin(cube, k, params).cell] += 1
        except PipelineError:
            continue
    if not votes:
        raise PipelineError("no feasible bins")
    return votes.most_common(1)[0][0]


def chirp_averaged_cell(cube: DataCube, cell: tuple[int, int],
                        settings: MapSettings = MapSettings(), block: int = 64) -> np.ndarray:
    """Chirp-mean of one map cell for every frame (complex, length F)."""
    cfg = cube.config
    w = bin_weights(cfg, cell[0], cell[1], settings).astype(np.complex64)
    wcol = w[:, :, None]  # (rx, sample, 1)
    out = np.empty(cube.n_frames, dtype=complex)
    for k0 in range(0, cube.n_frames, block):
        k1 = min(cube.n_frames, k0 + block)
        x = np.asarray(cube.frames[k0:k1])
        per_chirp = np.matmul(x, wcol)[..., 0].sum(axis=1)  # (frames, chirps)
        out[k0:k1] = per_chirp.mean(axis=1, dtype=complex)
    return out


def unwrap_phase(wrapped: np.ndarray) -> np.ndarray:
    """Add multiples of 2 pi so successive samples differ by at most pi."""
    return np.unwrap(np.asarray(wrapped, dtype=float))


def extract_phase(cube: DataCube, cell: tuple[int, int],
                  settings: MapSettings = MapSettings()) -> PhaseSeries:
    """Unwrapped slow-time phase of one cell after averaging each frame's chirps.

    Raises
    ------
    IndexError
        If the cell lies outside the map.
    PipelineError
        "bin power vanished" naming the first frame whose average is zero.
    """
    cfg = cube.config
    n_r = settings.range_fft_size(cfg)
    if not (0 <= cell[0] < n_r and 0 <= cell[1] < settings.n_azimuth):
        raise IndexError(f"cell {cell} outside the {n_r}x{settings.n_azimuth} map")
    z = chirp_averaged_cell(cube, cell, settings)
    mag = np.abs(z)
    vanished = mag <= 1e-12 * mag.max() if mag.max() > 0 else np.ones(mag.size, dtype=bool)
    if vanished.any():
        k = int(np.argmax(vanished))
        raise PipelineError(f"bin power vanished at frame {k}")
    return PhaseSeries(unwrap_phase(np.angle(z)), cfg.slow_time_rate, (int(cell[0]), int(cell[1])))


def _padlen(n: int, fs: float, low: float) -> int:
    return int(min(n - 1, math.ceil(3 * fs / low)))


def bandpass(x: np.ndarray, fs: float, low: float, high: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass."""
    sos = signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x, padlen=_padlen(len(x), fs, low))


def notch(x: np.ndarray, fs: float, f0: float, q: float = 8.0) -> np.ndarray:
    """Zero-phase second-order notch at ``f0``."""
    b, a = signal.iirnotch(f0, q, fs=fs)
    return signal.filtfilt(b, a, x, padlen=_padlen(len(x), fs, f0 / q))


def envelope(x: np.ndarray) -> np.ndarray:
    """Hilbert envelope computed on an odd extension of ``x``.

    Extending by a quarter record on each side keeps the FFT-based
    transform from wrapping one edge onto the other.
    """
    n = x.size
    p = min(n - 1, n // 4)
    if p < 1:
        return np.abs(signal.hilbert(x))
    ext = np.concatenate([2 * x[0] - x[p:0:-1], x, 2 * x[-1] - x[-2:-p - 2:-1]])
    return np.abs(signal.hilbert(ext))[p:p + n]


def _refine(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Parabolic sub-sample peak positions."""
    pos = idx.astype(float)
    inner = (idx > 0) & (idx < x.size - 1)
    i = idx[inner]
    y0, y1, y2 = x[i - 1], x[i], x[i + 1]
    den = y0 - 2 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, 0.5 * (y0 - y2) / den, 0.0)
    pos[inner] += np.clip(off, -0.5, 0.5)
    return pos


def detect_peaks(x: np.ndarray, fs: float, min_separation: float,
                 params: EstimatorParams = EstimatorParams()) -> np.ndarray:
    """Peak times (s) with a minimum spacing and an IQR-relative prominence."""
    q75, q25 = np.percentile(x, [75, 25])
    prom = params.prominence_iqr * (q75 - q25)
    dist = max(1, int(math.floor(min_separation * fs)))
    idx, _ = signal.find_peaks(x, distance=dist, prominence=prom if prom > 0 else None)
    pos = _refine(x, idx) if params.interpolate_peaks else idx.astype(float)
    return pos / fs


def estimate_rr(phase: PhaseSeries, params: EstimatorParams = EstimatorParams()) -> RateEstimate:
    """Breathing rate from respiratory-band peaks.

    The rate is ``60 * mean(1 / dt)`` over the inter-peak gaps of the
    band-passed phase (a mean of instantaneous rates, which exceeds
    ``60 / mean(dt)`` when gaps vary), clipped to the 6-30 bpm band.  The
    Hilbert envelope is returned as a diagnostic.
    """
    fs = phase.rate
    if phase.duration < 20.0:
        raise ValueError(f"record of {phase.duration:.1f} s is shorter than 20 s")
    low, high = RESP_BAND
    x = bandpass(phase.samples - np.mean(phase.samples), fs, low, high, params.filter_order)
    env = envelope(x)
    times = detect_peaks(x, fs, 1.0 / high, params)
    if times.size < 2:
        raise PipelineError("insufficient respiratory cycles")
    gaps = np.diff(times)
    value = float(np.clip(60.0 * np.mean(1.0 / gaps), 60 * low, 60 * high))
    return RateEstimate(value, RESP_BAND, gaps, times, x, envelope=env)


def respiratory_notches(f_br: float, band_edge: float = CARDIAC_BAND[0]) -> list[float]:
    """Breathing fundamental and harmonics lying below the cardiac band."""
    if not f_br or f_br <= 0:
        return []
    k = np.arange(1, int(math.floor(band_edge / f_br)) + 1)
    return [float(f) for f in k * f_br if f < band_edge]


def estimate_hr(phase: PhaseSeries, resp_fundamental: Optional[float],
                params: EstimatorParams = EstimatorParams()) -> RateEstimate:
    """Heart rate from the cardiac-band spectrum of the unwrapped phase.

    Parameters
    ----------
    phase : PhaseSeries
        At least 10 s long.
    resp_fundamental : float or None
        Breathing frequency in Hz (``RR / 60``).  Its multiples below 0.9 Hz
        are notched; ``None`` skips the notch.

    Returns
    -------
    RateEstimate
        ``value`` is ``60 * f_peak`` with ``f_peak`` the largest bin of the
        ``next_pow2(8 F)``-point DFT inside 0.9-3.0 Hz.  ``intervals`` are
        the peak-to-peak beat intervals of the cardiac-filtered series,
        with peaks at least ``max(1/3 s, refractory_fraction * 60 / HR)``
        apart so pulse harmonics do not split a beat.
        ``low_confidence`` is set when the peak is less than 3 dB above the
        in-band median.
    """
    fs = phase.rate
    if phase.duration < 10.0:
        raise ValueError(f"record of {phase.duration:.1f} s is shorter than 10 s")
    low, high = CARDIAC_BAND
    top = min(high, 0.95 * fs / 2)
    n_fft = next_pow2(params.fft_oversample * phase.samples.size)
    freqs = np.arange(n_fft) * fs / n_fft
    in_band = (freqs >= low) & (freqs <= high) & (freqs < fs / 2)
    if not in_band.any() or top <= low:
        raise PipelineError("no spectral bin inside the cardiac band")

    x = phase.samples - np.mean(phase.samples)
    for f0 in respiratory_notches(resp_fundamental):
        if f0 < fs / 2:
            x = notch(x, fs, f0, params.notch_q)
    x = bandpass(x, fs, low, top, params.filter_order)

    spec = np.abs(fft_1d(x, n_fft))
    idx = np.flatnonzero(in_band)
    best = idx[np.argmax(spec[idx])]
    med = np.median(spec[idx])
    snr_db = float(20 * np.log10(spec[best] / med)) if med > 0 else float("inf")
    value = 60.0 * freqs[best]

    spacing = max(60.0 / 180.0, params.refractory_fraction * 60.0 / value)
    times = detect_peaks(x, fs, spacing, params)
    gaps = np.diff(times) if times.size >= 2 else np.empty(0)
    return RateEstimate(value, CARDIAC_BAND, gaps, times, x,
                        low_confidence=snr_db < params.low_confidence_db, peak_snr_db=snr_db)


@dataclass(frozen=True)
class PipelineParams:
    selection: BinSelectionParams = field(default_factory=BinSelectionParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    selection_frame: int = 0
    vote_every: Optional[int] = None  # per-frame reselection with majority vote


@dataclass
class VitalsReport:
    rr: float
    hr: float
    hr_low_confidence: bool
    hr_peak_snr_db: float
    selected_bin: tuple[int, int]
    selected_range_m: float
    bbi: np.ndarray = field(repr=False)
    ibi: np.ndarray = field(repr=False)
    hrv: Optional[HrvReport] = None
    brv: Optional[BrvReport] = None
    brv_rejected: int = 0
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {
            "rr_bpm": self.rr, "hr_bpm": self.hr,
            "hr_low_confidence": self.hr_low_confidence,
            "hr_peak_snr_db": self.hr_peak_snr_db,
            "selected_range_bin": self.selected_bin[0],
            "selected_azimuth_bin": self.selected_bin[1],
            "selected_range_m": self.selected_range_m,
            "n_ibi": int(self.ibi.size), "n_bbi": int(self.bbi.size),
            "brv_rejected": self.brv_rejected,
            "notes": list(self.notes),
        }
        for prefix, rep in (("hrv", self.hrv), ("brv", self.brv)):
            if rep is not None:
                for k, v in rep.__dict__.items():
                    d[f"{prefix}_{k}"] = v
        return d


def process_cube(cube: DataCube, params: PipelineParams = PipelineParams()) -> VitalsReport:
    """Run bin selection, phase extraction, RR/HR estimation and variability metrics."""
    sel = params.selection
    if params.vote_every:
        cell = select_bin_by_vote(cube, sel, params.vote_every)
    else:
        cell = select_bin(cube, params.selection_frame, sel).cell
    phase = extract_phase(cube, cell, sel.map)
    rr = estimate_rr(phase, params.estimator)
    hr = estimate_hr(phase, rr.value / 60.0, params.estimator)

    notes = []
    hrv = brv = None
    rejected = 0
    try:
        hrv = hrv_metrics(hr.intervals)
    except (InsufficientIntervals, ValueError) as exc:
        notes.append(f"hrv: {exc}")
    try:
        brv, rejected = brv_metrics(rr.intervals)
    except (InsufficientIntervals, ValueError) as exc:
        notes.append(f"brv: {exc}")
    if hr.low_confidence:
        notes.append("low-confidence HR")
    return VitalsReport(
        rr=rr.value, hr=hr.value, hr_low_confidence=hr.low_confidence,
        hr_peak_snr_db=hr.peak_snr_db, selected_bin=cell,
        selected_range_m=cell[0] * range_bin_width(cube.config, sel.map),
        bbi=rr.intervals, ibi=hr.intervals, hrv=hrv, brv=brv, brv_rejected=rejected,
        notes=notes)
