"""Radar configuration, data cube container and range-azimuth processing.

The receive dimension is treated as a uniform linear azimuth array.  Maps
are produced by a (windowed) fast-time FFT per receive channel followed by
a zero-padded FFT across channels, with the azimuth axis fft-shifted so the
broadside bin sits at ``n_azimuth // 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.signal import windows


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


@dataclass(frozen=True)
class RadarConfig:
    """Waveform, timing and array constants of one capture.

    Defaults are the BGT60TR13C settings: 58-63 GHz sweep, 124 us chirp
    repetition, 128 chirps of 128 samples at 3 MSPS, 30 frames/s, 1 TX and
    3 RX at half-wavelength spacing.

    The ramp is assumed to last exactly the ADC window
    (``n_adc_samples / adc_sample_rate``), so a range bin of the
    un-padded fast-time FFT is ``c / (2 B)`` wide.
    """

    f_start: float = 58e9
    f_end: float = 63e9
    chirp_repetition_time: float = 124e-6
    n_chirps: int = 128
    n_adc_samples: int = 128
    adc_sample_rate: float = 3e6
    frame_interval: float = 1.0 / 30.0
    n_rx: int = 3
    n_tx: int = 1
    rx_spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if not self.f_end > self.f_start > 0:
            raise ValueError("need 0 < f_start < f_end")
        for name in ("n_chirps", "n_adc_samples", "n_rx", "n_tx"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("chirp_repetition_time", "adc_sample_rate",
                     "frame_interval", "rx_spacing_wavelengths"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.sweep_time > self.chirp_repetition_time * (1 + 1e-12):
            raise ValueError("ADC window longer than the chirp repetition time")
        if self.n_chirps * self.chirp_repetition_time > self.frame_interval * (1 + 1e-12):
            raise ValueError(
                f"{self.n_chirps} chirps of {self.chirp_repetition_time:g} s "
                f"do not fit in a {self.frame_interval:g} s frame")

    @property
    def bandwidth(self) -> float:
        return self.f_end - self.f_start

    @property
    def center_frequency(self) -> float:
        return 0.5 * (self.f_start + self.f_end)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center_frequency

    @property
    def sweep_time(self) -> float:
        return self.n_adc_samples / self.adc_sample_rate

    @property
    def chirp_slope(self) -> float:
        """Frequency slope K in Hz/s."""
        return self.bandwidth / self.sweep_time

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def max_range(self) -> float:
        """Largest range whose beat tone stays below adc_sample_rate / 2."""
        return self.adc_sample_rate / 2.0 * SPEED_OF_LIGHT / (2.0 * self.chirp_slope)

    @property
    def slow_time_rate(self) -> float:
        return 1.0 / self.frame_interval

    def beat_frequency(self, distance: float) -> float:
        return 2.0 * self.chirp_slope * distance / SPEED_OF_LIGHT

    def replace(self, **changes) -> "RadarConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class MapSettings:
    """How range-azimuth maps are formed.

    ``window`` is ``"hann"`` or ``None`` (rectangular).  ``n_range`` defaults
    to the next power of two >= ``n_adc_samples``.
    """

    window: Optional[str] = "hann"
    n_azimuth: int = 64
    n_range: Optional[int] = None

    def range_fft_size(self, config: RadarConfig) -> int:
        n = self.n_range if self.n_range is not None else config.n_adc_samples
        if n < config.n_adc_samples:
            raise ValueError("range FFT shorter than the chirp")
        return next_pow2(n)

    def fast_time_window(self, n: int) -> np.ndarray:
        if self.window is None:
            return np.ones(n)
        if self.window == "hann":
            return windows.hann(n, sym=False)
        raise ValueError(f"unknown window {self.window!r}")


@dataclass(frozen=True)
class DataCube:
    """Complex measurements indexed ``[frame, rx, chirp, sample]``.

    ``frames`` may be an ndarray, a read-only memmap or any lazily
    evaluated object with ``shape`` and slice indexing on the first axis.
    """

    config: RadarConfig
    frames: object = field(repr=False)

    def __post_init__(self):
        shape = tuple(self.frames.shape)
        cfg = self.config
        expected = (cfg.n_rx, cfg.n_chirps, cfg.n_adc_samples)
        if len(shape) != 4 or shape[1:] != expected:
            raise ValueError(f"cube shape {shape} does not match config (F, {expected})")
        if shape[0] < 1:
            raise ValueError("cube needs at least one frame")
        if isinstance(self.frames, np.ndarray) and not isinstance(self.frames, np.memmap):
            if not np.all(np.isfinite(self.frames)):
                raise ValueError("cube contains non-finite samples")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def frame(self, k: int) -> np.ndarray:
        if not 0 <= k < self.n_frames:
            raise IndexError(f"frame {k} out of range [0, {self.n_frames})")
        return np.asarray(self.frames[k:k + 1])[0]

    def scaled(self, gain: complex) -> "DataCube":
        return DataCube(self.config, np.asarray(self.frames[:]) * gain)


@dataclass(frozen=True)
class RangeAzimuthMap:
    cells: np.ndarray  # [n_range_bins, n_azimuth_bins]
    range_bin_width: float
    azimuth_axis: np.ndarray

    @property
    def range_axis(self) -> np.ndarray:
        return np.arange(self.cells.shape[0]) * self.range_bin_width

    def peak(self) -> tuple[int, int]:
        r, a = np.unravel_index(np.argmax(np.abs(self.cells)), self.cells.shape)
        return int(r), int(a)


def fft_1d(signal, size: Optional[int] = None) -> np.ndarray:
    """Zero-padded DFT, ``X[n] = sum_k x[k] exp(-2j pi n k / size)``."""
    x = np.asarray(signal, dtype=complex)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("empty signal")
    size = x.size if size is None else int(size)
    if size < x.size:
        raise ValueError(f"transform size {size} shorter than signal ({x.size})")
    return np.fft.fft(x, n=size)


def range_bin_width(config: RadarConfig, settings: MapSettings) -> float:
    return config.range_resolution * config.n_adc_samples / settings.range_fft_size(config)


def azimuth_axis(config: RadarConfig, settings: MapSettings) -> np.ndarray:
    """Angle of each shifted azimuth bin; NaN where the bin is not visible."""
    n = settings.n_azimuth
    u = (np.arange(n) - n // 2) / n / config.rx_spacing_wavelengths
    with np.errstate(invalid="ignore"):
        return np.where(np.abs(u) <= 1, np.arcsin(np.clip(u, -1, 1)), np.nan)


def frame_maps(cube: DataCube, frame: int, settings: MapSettings = MapSettings()) -> np.ndarray:
    """Range-azimuth maps of every chirp of one frame, shape ``(N_c, N_r, N_az)``."""
    cfg = cube.config
    x = cube.frame(frame)  # (rx, chirp, sample)
    win = settings.fast_time_window(cfg.n_adc_samples)
    rng_fft = np.fft.fft(x * win, n=settings.range_fft_size(cfg), axis=-1)
    az = np.fft.fftshift(np.fft.fft(rng_fft, n=settings.n_azimuth, axis=0), axes=0)
    return np.transpose(az, (1, 2, 0))


def range_azimuth_map(cube: DataCube, frame: int, chirp: int,
                      settings: MapSettings = MapSettings()) -> RangeAzimuthMap:
    """Map of one (frame, chirp) slice: range FFT per channel, then azimuth FFT.

    Parameters
    ----------
    cube : DataCube
    frame, chirp : int
        Slice indices; out-of-range indices raise ``IndexError``.
    settings : MapSettings
        Window and FFT sizes.  ``MapSettings(window=None)`` gives the raw
        rectangular transform.
    """
    cfg = cube.config
    if not 0 <= chirp < cfg.n_chirps:
        raise IndexError(f"chirp {chirp} out of range [0, {cfg.n_chirps})")
    x = cube.frame(frame)[:, chirp, :]
    win = settings.fast_time_window(cfg.n_adc_samples)
    rng_fft = np.fft.fft(x * win, n=settings.range_fft_size(cfg), axis=-1)
    az = np.fft.fftshift(np.fft.fft(rng_fft, n=settings.n_azimuth, axis=0), axes=0)
    return RangeAzimuthMap(cells=az.T, range_bin_width=range_bin_width(cfg, settings),
                           azimuth_axis=azimuth_axis(cfg, settings))


def bin_weights(config: RadarConfig, range_bin: int, azimuth_bin: int,
                settings: MapSettings = MapSettings()) -> np.ndarray:
    """Weights ``w[rx, sample]`` such that ``sum(x * w)`` is map cell (r, a).

    Lets a single cell be evaluated over many frames without forming maps.
    """
    n_r = settings.range_fft_size(config)
    n_az = settings.n_azimuth
    a_raw = (azimuth_bin - n_az // 2) % n_az
    n = np.arange(config.n_adc_samples)
    m = np.arange(config.n_rx)
    w_range = settings.fast_time_window(config.n_adc_samples) * np.exp(-2j * np.pi * range_bin * n / n_r)
    w_az = np.exp(-2j * np.pi * a_raw * m / n_az)
    return np.outer(w_az, w_range)
