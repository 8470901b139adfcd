"""Cardiorespiratory chest motion and radar data-cube synthesis.

Chest displacement is the sum of a respiratory and a cardiac component, each
driven by a phase that advances by one cycle per generated interval.  Cycle
boundaries are the waveform peaks, so the peak-to-peak intervals of the
noiseless displacement are exactly the ground-truth interval sequences.

Synthesis writes post-mixer samples directly: a beat tone at ``2 K R / c``,
the carrier phase ``4 pi (d0 + dd(t)) / lambda`` evaluated at each chirp's
start time, a linear-array steering phase and circular complex Gaussian
receiver noise.  Displacement is held constant within a chirp.  There is no
separate displacement noise term; receiver noise stands in for it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .radar import DataCube, RadarConfig

RESP_WAVEFORMS = ("sinusoid",)
CARDIAC_WAVEFORMS = ("raised_cosine", "sinusoid")
PULSE_WIDTH = 0.35  # cardiac pulse width as a fraction of the beat interval


@dataclass(frozen=True)
class PhysioProfile:
    """Ground-truth cardiorespiratory parameters.

    Rates are per minute, amplitudes in meters, jitter in seconds.  Values
    outside the usual adult ranges (HR 60-100, RR 12-25, cardiac 1-9 mm,
    respiratory 10-50 mm) are allowed for stress tests but warn.
    """

    mean_hr: float = 72.0
    mean_rr: float = 15.0
    cardiac_amplitude: float = 0.001
    resp_amplitude: float = 0.010
    ibi_jitter_sd: float = 0.040
    bbi_jitter_sd: float = 0.300
    seed: int = 0
    cardiac_waveform: str = "raised_cosine"
    resp_waveform: str = "sinusoid"

    def __post_init__(self):
        if self.mean_hr <= 0 or self.mean_rr <= 0:
            raise ValueError("rates must be positive")
        if self.cardiac_amplitude < 0 or self.resp_amplitude < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.ibi_jitter_sd < 0 or self.bbi_jitter_sd < 0:
            raise ValueError("jitter SDs must be non-negative")
        if self.cardiac_waveform not in CARDIAC_WAVEFORMS:
            raise ValueError(f"cardiac_waveform must be one of {CARDIAC_WAVEFORMS}")
        if self.resp_waveform not in RESP_WAVEFORMS:
            raise ValueError(f"resp_waveform must be one of {RESP_WAVEFORMS}")
        checks = [
            (60 <= self.mean_hr <= 100, f"mean_hr {self.mean_hr} outside 60-100 bpm"),
            (12 <= self.mean_rr <= 25, f"mean_rr {self.mean_rr} outside 12-25 bpm"),
            (0.001 <= self.cardiac_amplitude <= 0.009,
             f"cardiac_amplitude {self.cardiac_amplitude} m outside 1-9 mm"),
            (0.010 <= self.resp_amplitude <= 0.050,
             f"resp_amplitude {self.resp_amplitude} m outside 10-50 mm"),
        ]
        for ok, msg in checks:
            if not ok:
                warnings.warn(msg, stacklevel=3)


@dataclass(frozen=True)
class Scenario:
    baseline_range: float = 0.70
    azimuth: float = 0.0
    rcs: float = 1.0
    noise_sd: float = 0.0
    tx_amplitude: float = 1.0

    def __post_init__(self):
        if not self.baseline_range > 0:
            raise ValueError("baseline_range must be > 0")
        if abs(self.azimuth) > math.pi / 3 + 1e-12:
            raise ValueError("azimuth must lie in [-pi/3, pi/3]")
        if not self.rcs > 0:
            raise ValueError("rcs must be > 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


@dataclass(frozen=True)
class GroundTruth:
    displacement: np.ndarray = field(repr=False)
    time: np.ndarray = field(repr=False)
    ibi_seq: np.ndarray = field(repr=False)
    bbi_seq: np.ndarray = field(repr=False)

    @property
    def true_hr(self) -> float:
        return _rate(self.ibi_seq)

    @property
    def true_rr(self) -> float:
        return _rate(self.bbi_seq)


def _rate(intervals: np.ndarray) -> float:
    """Mean rate in per-minute units; NaN when the record holds no full interval."""
    return 60.0 / float(np.mean(intervals)) if len(intervals) else math.nan


def generate_intervals(mean_interval: float, jitter_sd: float, total_time: float,
                       seed: int) -> np.ndarray:
    """Successive Gaussian intervals whose running sum reaches ``total_time``.

    Draws are i.i.d. ``N(mean_interval, jitter_sd)`` truncated below at
    ``0.25 * mean_interval`` (by redrawing).  The returned prefix is the
    shortest one whose cumulative sum covers ``total_time``.
    """
    if not mean_interval > 0:
        raise ValueError("mean_interval must be > 0")
    if jitter_sd < 0:
        raise ValueError("jitter_sd must be >= 0")
    if not total_time > mean_interval:
        raise ValueError("total_time must exceed mean_interval")
    rng = np.random.default_rng(seed)
    floor = 0.25 * mean_interval
    block = int(math.ceil(total_time / mean_interval)) + 8
    out = np.empty(0)
    while out.sum() < total_time * (1 - 1e-12):
        x = rng.normal(mean_interval, jitter_sd, block)
        low = x < floor
        while low.any():
            x[low] = rng.normal(mean_interval, jitter_sd, int(low.sum()))
            low = x < floor
        out = np.concatenate([out, x])
    n = int(np.searchsorted(np.cumsum(out), total_time * (1 - 1e-12))) + 1
    return out[:n]


class _CycleClock:
    """Piecewise-linear cycle phase with cycle boundaries at ``events``."""

    def __init__(self, mean_interval, jitter_sd, t_end, seed):
        # first boundary half a cycle before t=0 so the record starts mid-cycle
        horizon = t_end + 3.0 * mean_interval
        iv = generate_intervals(mean_interval, jitter_sd, horizon, seed)
        self.events = np.concatenate([[0.0], np.cumsum(iv)]) - 0.5 * iv[0]
        self.intervals = iv
        if self.events[-1] < t_end:
            raise RuntimeError("interval horizon does not cover the record")

    def phase(self, t):
        """Cycle phase in radians; zero at each boundary."""
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.events, t, side="right") - 1
        i = np.clip(i, 0, len(self.intervals) - 1)
        return 2 * np.pi * (i + (t - self.events[i]) / self.intervals[i])

    def intervals_within(self, t0, t1):
        ev = self.events[(self.events >= t0) & (self.events <= t1)]
        return np.diff(ev)


def _raised_cosine(phase):
    c = np.remainder(phase + np.pi, 2 * np.pi) - np.pi
    half = PULSE_WIDTH * np.pi
    return np.where(np.abs(c) <= half, 0.5 * (1 + np.cos(np.pi * c / half)), 0.0)


class ChestMotion:
    """Displacement generator for one profile realisation over ``[0, t_end]``."""

    def __init__(self, profile: PhysioProfile, t_end: float):
        self.profile = profile
        self.t_end = float(t_end)
        self.cardiac = _CycleClock(60.0 / profile.mean_hr, profile.ibi_jitter_sd,
                                   t_end, 2 * profile.seed)
        self.resp = _CycleClock(60.0 / profile.mean_rr, profile.bbi_jitter_sd,
                                t_end, 2 * profile.seed + 1)

    def __call__(self, t) -> np.ndarray:
        p = self.profile
        d = p.resp_amplitude * np.cos(self.resp.phase(t))
        ph = self.cardiac.phase(t)
        if p.cardiac_waveform == "raised_cosine":
            d = d + p.cardiac_amplitude * _raised_cosine(ph)
        else:
            d = d + p.cardiac_amplitude * np.cos(ph)
        return d

    def truth(self, time: np.ndarray) -> GroundTruth:
        t0, t1 = float(time[0]), float(time[-1])
        return GroundTruth(
            displacement=self(time),
            time=np.asarray(time, dtype=float),
            ibi_seq=self.cardiac.intervals_within(t0, t1),
            bbi_seq=self.resp.intervals_within(t0, t1),
        )


def chest_displacement(profile: PhysioProfile, time_axis) -> GroundTruth:
    """Noise-free chest displacement sampled on a uniform time axis.

    Parameters
    ----------
    profile : PhysioProfile
    time_axis : array_like
        Strictly increasing, uniformly spaced sample times in seconds.

    Returns
    -------
    GroundTruth
        Displacement in meters plus the inter-beat and breath-to-breath
        intervals whose boundaries fall inside the time axis.
    """
    t = np.asarray(time_axis, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("time axis needs at least two samples")
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("time axis must be strictly increasing and uniformly spaced")
    return ChestMotion(profile, t[-1]).truth(t)


class SyntheticFrames:
    """Lazily evaluated frame tensor ``[F, N_RX, N_c, N_a]`` (complex64).

    Each frame draws its noise from its own substream keyed by
    ``(seed, frame)``, so any slicing order yields identical samples.
    """

    dtype = np.dtype(np.complex64)

    def __init__(self, config: RadarConfig, scenario: Scenario, motion: ChestMotion,
                 n_frames: int, seed: int):
        self.config = config
        self.scenario = scenario
        self.motion = motion
        self.seed = int(seed)
        self.shape = (int(n_frames), config.n_rx, config.n_chirps, config.n_adc_samples)
        cfg = config
        lam = cfg.wavelength
        r0 = scenario.baseline_range
        self.amplitude = scenario.tx_amplitude * math.sqrt(
            lam ** 2 * scenario.rcs / ((4 * math.pi) ** 3 * r0 ** 4))
        t_fast = np.arange(cfg.n_adc_samples) / cfg.adc_sample_rate
        self._beat = np.exp(2j * np.pi * cfg.beat_frequency(r0) * t_fast).astype(np.complex64)
        m = np.arange(cfg.n_rx)
        self._steer = np.exp(2j * np.pi * cfg.rx_spacing_wavelengths * m
                             * math.sin(scenario.azimuth)).astype(np.complex64)
        self._k_phase = 4 * np.pi / lam

    def __len__(self):
        return self.shape[0]

    def chirp_times(self, k0: int, k1: int) -> np.ndarray:
        cfg = self.config
        k = np.arange(k0, k1)[:, None]
        j = np.arange(cfg.n_chirps)[None, :]
        return k * cfg.frame_interval + j * cfg.chirp_repetition_time

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            k = int(index) + (self.shape[0] if index < 0 else 0)
            if not 0 <= k < self.shape[0]:
                raise IndexError(index)
            return self._block(k, k + 1)[0]
        if not isinstance(index, slice) or index.step not in (None, 1):
            raise TypeError("SyntheticFrames supports integer or contiguous slice indexing")
        k0, k1, _ = index.indices(self.shape[0])
        return self._block(k0, max(k0, k1))

    def __array__(self, dtype=None, copy=None):
        out = self[:]
        return out if dtype is None else out.astype(dtype)

    def _block(self, k0: int, k1: int) -> np.ndarray:
        cfg = self.config
        disp = self.motion(self.chirp_times(k0, k1))
        carrier = np.exp(1j * self._k_phase * (self.scenario.baseline_range + disp))
        carrier = (self.amplitude * carrier).astype(np.complex64)
        out = (carrier[:, None, :, None] * self._steer[None, :, None, None]) * self._beat
        sd = self.scenario.noise_sd
        if sd > 0:
            scale = np.float32(sd / math.sqrt(2.0))
            for i, k in enumerate(range(k0, k1)):
                rng = np.random.default_rng([self.seed, k])
                w = rng.standard_normal(out.shape[1:] + (2,), dtype=np.float32)
                w *= scale
                out[i] += w.view(np.complex64)[..., 0]
        return out


def n_frames_for(config: RadarConfig, duration: float) -> int:
    return int(math.floor(duration / config.frame_interval + 1e-9))


def max_phase_step(config: RadarConfig, displacement: np.ndarray) -> float:
    """Largest frame-to-frame carrier phase change of a displacement series."""
    if len(displacement) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(displacement)))) * 4 * np.pi / config.wavelength


def synthesize_cube(config: RadarConfig, scenario: Scenario, profile: PhysioProfile,
                    duration: float, seed: int, lazy: bool = False,
                    block: int = 32) -> tuple[DataCube, GroundTruth]:
    """Simulate a capture of a breathing subject.

    Parameters
    ----------
    config : RadarConfig
        Must use a single transmitter.
    scenario : Scenario
        Target geometry, RCS and receiver noise level.
    profile : PhysioProfile
        Chest-motion ground truth parameters (own seed).
    duration : float
        Record length in seconds; ``F = floor(duration / frame_interval)``.
    seed : int
        Receiver-noise seed.
    lazy : bool
        Return a cube backed by :class:`SyntheticFrames` instead of a
        materialised array.  Samples are identical either way.

    Returns
    -------
    (DataCube, GroundTruth)
        Ground-truth displacement is sampled at each frame's chirp centroid.
    """
    if config.n_tx != 1:
        raise ValueError("synthesis supports a single transmitter only")
    if duration < 2 * config.frame_interval:
        raise ValueError("duration must cover at least two frames")
    if config.beat_frequency(scenario.baseline_range) > config.adc_sample_rate / 2:
        raise ValueError("target beyond unambiguous range")
    n_frames = n_frames_for(config, duration)
    t_end = n_frames * config.frame_interval
    motion = ChestMotion(profile, t_end)
    frames = SyntheticFrames(config, scenario, motion, n_frames, seed)

    centroid = 0.5 * (config.n_chirps - 1) * config.chirp_repetition_time
    t_frames = np.arange(n_frames) * config.frame_interval + centroid
    truth = motion.truth(t_frames)
    truth = GroundTruth(truth.displacement, truth.time,
                        motion.cardiac.intervals_within(0.0, t_end),
                        motion.resp.intervals_within(0.0, t_end))
    step = max_phase_step(config, truth.displacement)
    if step > np.pi:
        warnings.warn(f"displacement changes carrier phase by up to {step:.2f} rad per "
                      "frame; slow-time phase will alias", stacklevel=2)
    if lazy:
        return DataCube(config, frames), truth
    data = np.empty(frames.shape, dtype=np.complex64)
    for k0 in range(0, n_frames, block):
        k1 = min(n_frames, k0 + block)
        data[k0:k1] = frames[k0:k1]
    data.flags.writeable = False
    return DataCube(config, data), truth
