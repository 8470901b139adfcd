import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from fmcw_vitals import (BinSelectionParams, DataCube, MapSettings, PhaseSeries, PhysioProfile,
                         PipelineError, PipelineParams, RadarConfig, Scenario, estimate_hr,
                         estimate_rr, extract_phase, process_cube, select_bin, synthesize_cube)
from fmcw_vitals.harness import calibrate_noise_sd
from fmcw_vitals.pipeline import (CARDIAC_BAND, RESP_BAND, bandpass, circular_std, notch,
                                  respiratory_notches, unwrap_phase)

FS = 30.0


def quiet_profile(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PhysioProfile(**kw)


def tone(f, seconds=60.0, fs=FS, amp=1.0, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.cos(2 * np.pi * f * t + phase)


def series(x, fs=FS):
    return PhaseSeries(np.asarray(x, float), fs, (0, 0))


def in_band_fraction(y, fs, lo, hi):
    f, p = signal.periodogram(y, fs, window="hann")
    return p[(f >= lo) & (f <= hi)].sum() / p.sum()


@pytest.fixture(scope="module")
def clean_record():
    """Noiseless 60 s record with fixed rates (15 bpm, 72 bpm)."""
    p = PhysioProfile(ibi_jitter_sd=0.0, bbi_jitter_sd=0.0)
    return synthesize_cube(RadarConfig(n_chirps=16), Scenario(), p, 60.0, seed=0, lazy=True)


@pytest.fixture(scope="module")
def noisy_frame_cube():
    cfg = RadarConfig(n_chirps=16, n_adc_samples=64)
    sd = calibrate_noise_sd(15.0, cfg)
    cube, _ = synthesize_cube(cfg, Scenario(noise_sd=sd), PhysioProfile(seed=2), 0.1, seed=4)
    return cube


class TestSelectBin:
    def test_noiseless_target_cell(self, clean_record):
        cube, _ = clean_record
        sel = select_bin(cube)
        assert sel.cell == (round(0.70 / 0.03), 32) == (23, 32)
        assert sel.feasible[sel.cell]
        assert sel.sigma_phi.shape == sel.p_log.shape == sel.feasible.shape

    def test_motion_beats_static_clutter(self):
        # A: strong tone with constant phase; B: weaker tone whose phase changes every chirp
        cfg = RadarConfig(n_chirps=16)
        rng = np.random.default_rng(0)
        n = np.arange(cfg.n_adc_samples)
        a = 10 * np.exp(2j * np.pi * 20 * n / 128)
        b = np.exp(2j * np.pi * 40 * n / 128)
        x = np.empty((1, 3, 16, 128), complex)
        for j in range(16):
            x[0, :, j, :] = a + b * np.exp(1j * rng.uniform(-np.pi, np.pi))
        sel = select_bin(DataCube(cfg, x), params=BinSelectionParams(map=MapSettings(window=None)))
        assert sel.cell == (40, 32)

    def test_all_zero_cube(self):
        cube = DataCube(RadarConfig(n_chirps=4), np.zeros((2, 3, 4, 128), np.complex64))
        with pytest.raises(PipelineError, match="no feasible bins"):
            select_bin(cube)

    def test_empty_window(self, clean_record):
        cube, _ = clean_record
        with pytest.raises(PipelineError, match="no feasible bins"):
            select_bin(cube, params=BinSelectionParams(r_min=3.0, r_max=4.0))

    @pytest.mark.parametrize("kw", [dict(w1=0.5, w2=0.6), dict(w1=-0.1, w2=1.1),
                                    dict(r_min=1.0, r_max=0.5)])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            BinSelectionParams(**kw)

    @given(st.floats(-3.0, 3.0))
    def test_gain_invariance(self, noisy_frame_cube, log_gain):
        base = select_bin(noisy_frame_cube).cell
        assert select_bin(noisy_frame_cube.scaled(10.0 ** log_gain)).cell == base

    def test_circular_std(self):
        assert circular_std(np.zeros(10)) == pytest.approx(0.0, abs=1e-7)
        rng = np.random.default_rng(1)
        x = rng.normal(0, 0.05, 10000)
        assert circular_std(x) == pytest.approx(0.05, rel=0.03)
        # wrapping does not inflate the spread
        assert circular_std(x + np.pi) == pytest.approx(circular_std(x), rel=1e-6)


class TestExtractPhase:
    def test_static_target_is_constant(self):
        p = quiet_profile(cardiac_amplitude=0.0, resp_amplitude=0.0)
        cube, _ = synthesize_cube(RadarConfig(n_chirps=8), Scenario(), p, 2.0, seed=0)
        ph = extract_phase(cube, (23, 32))
        assert np.std(ph.samples) < 1e-9
        assert ph.samples.size == cube.n_frames and ph.rate == pytest.approx(30.0)

    def test_ramp_crossing_half_wavelength(self):
        ramp = np.linspace(0.0, 2 * np.pi + 0.5, 50)
        wrapped = np.angle(np.exp(1j * ramp))
        assert np.count_nonzero(np.abs(np.diff(wrapped)) > np.pi) == 1
        un = unwrap_phase(wrapped)
        assert np.all(np.diff(un) > 0)
        np.testing.assert_allclose(un, ramp, atol=1e-12)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
    def test_unwrap_jump_bound(self, xs):
        un = unwrap_phase(np.angle(np.exp(1j * np.array(xs))))
        assert np.all(np.abs(np.diff(un)) <= np.pi + 1e-9)

    def test_sinusoidal_phase_amplitude(self):
        cfg = RadarConfig(n_chirps=32, frame_interval=1 / 60)
        p = quiet_profile(cardiac_amplitude=0.0, resp_amplitude=0.030, bbi_jitter_sd=0.0)
        cube, _ = synthesize_cube(cfg, Scenario(), p, 12.0, seed=0, lazy=True)
        ph = extract_phase(cube, select_bin(cube).cell)
        amp = 0.5 * np.ptp(ph.samples)
        assert amp == pytest.approx(4 * np.pi * 0.030 / cfg.wavelength, rel=0.02)
        assert 4 * np.pi * 0.030 / cfg.wavelength == pytest.approx(76.0, abs=0.1)

    def test_cell_outside_map(self, clean_record):
        with pytest.raises(IndexError):
            extract_phase(clean_record[0], (500, 0))

    def test_vanished_power(self):
        cfg = RadarConfig(n_chirps=2)
        x = np.zeros((3, 3, 2, 128), complex)
        x[0, :, :, :] = 1.0
        with pytest.raises(PipelineError, match="bin power vanished at frame 1"):
            extract_phase(DataCube(cfg, x), (0, 32), MapSettings(window=None))

    def test_chirp_averaging_reduces_phase_variance(self):
        p = quiet_profile(cardiac_amplitude=0.0, resp_amplitude=0.0)
        sd = calibrate_noise_sd(0.0, RadarConfig())
        variances = []
        for nc in (8, 32, 128):
            cube, _ = synthesize_cube(RadarConfig(n_chirps=nc), Scenario(noise_sd=sd), p, 5.0,
                                      seed=3, lazy=True)
            variances.append(np.var(extract_phase(cube, (23, 32)).samples))
        assert variances[0] > variances[1] > variances[2]


class TestFilters:
    @pytest.mark.parametrize("band,lo,hi", [(RESP_BAND, 0.08, 0.55), (CARDIAC_BAND, 0.85, 3.1)])
    def test_band_confinement_of_power_response(self, band, lo, hi):
        # forward-backward filtering applies |H|^2 twice
        sos = signal.butter(4, band, btype="bandpass", fs=FS, output="sos")
        f, h = signal.sosfreqz(sos, worN=2**18, fs=FS)
        p = np.abs(h) ** 4
        assert p[(f >= lo) & (f <= hi)].sum() / p.sum() >= 0.95

    @given(st.integers(0, 2**32 - 1))
    def test_band_confinement(self, seed):
        # 10 min records keep the periodogram variance well below the margin
        x = np.random.default_rng(seed).normal(size=18000)
        assert in_band_fraction(bandpass(x, FS, *RESP_BAND), FS, 0.08, 0.55) >= 0.95
        assert in_band_fraction(bandpass(x, FS, *CARDIAC_BAND), FS, 0.85, 3.1) >= 0.95

    @given(st.floats(0.1, 0.45))
    def test_notch_depth(self, f0):
        x = tone(f0, seconds=400.0)
        y = notch(x, FS, f0, 8.0)
        mid = slice(x.size // 4, 3 * x.size // 4)
        t = np.arange(x.size)[mid] / FS
        basis = np.exp(2j * np.pi * f0 * t)
        before = abs(np.vdot(basis, x[mid]))
        after = abs(np.vdot(basis, y[mid]))
        assert 20 * np.log10(after / before) <= -30.0

    def test_zero_phase(self):
        t = np.arange(int(20 * FS)) / FS
        x = np.exp(-0.5 * ((t - 10.0) / 0.15) ** 2)
        for band in (RESP_BAND, CARDIAC_BAND):
            assert np.argmax(bandpass(x, FS, *band)) == np.argmax(x)

    def test_notch_list(self):
        assert respiratory_notches(0.25) == pytest.approx([0.25, 0.5, 0.75])
        assert respiratory_notches(0.5) == pytest.approx([0.5])
        assert respiratory_notches(0.0) == []


class TestEstimators:
    def test_clean_rr(self, clean_record):
        cube, gt = clean_record
        rr = estimate_rr(extract_phase(cube, select_bin(cube).cell))
        assert rr.value == pytest.approx(15.0, abs=0.3)
        assert np.all(rr.intervals > 0)

    def test_clean_hr(self, clean_record):
        cube, gt = clean_record
        ph = extract_phase(cube, select_bin(cube).cell)
        hr = estimate_hr(ph, 0.25)
        n_fft = 2 ** math.ceil(math.log2(8 * ph.samples.size))
        assert abs(hr.value - 72.0) <= 60 * FS / n_fft
        assert not hr.low_confidence

    def test_pure_resp_tone_envelope(self):
        rr = estimate_rr(series(tone(0.25, 120.0)))
        env = rr.envelope[int(20 * FS):-int(20 * FS)]
        assert np.ptp(env) <= 0.05 * env.mean()
        assert rr.value == pytest.approx(15.0, abs=0.05)

    def test_pure_cardiac_tone(self):
        hr = estimate_hr(series(tone(1.2, 60.0)), None)
        assert hr.value == pytest.approx(72.0, abs=0.05)

    def test_notch_keeps_heartbeat_with_breathing_harmonics(self):
        x = tone(0.25, 60.0, amp=30.0) + tone(0.5, 60.0, amp=5.0) + tone(1.3, 60.0, amp=1.0)
        assert estimate_hr(series(x), 0.25).value == pytest.approx(78.0, abs=0.1)

    def test_rr_too_short(self):
        with pytest.raises(ValueError, match="shorter than 20 s"):
            estimate_rr(series(tone(0.25, 15.0)))

    def test_hr_too_short(self):
        with pytest.raises(ValueError, match="shorter than 10 s"):
            estimate_hr(series(tone(1.2, 5.0)), None)

    def test_flat_record_has_no_cycles(self):
        with pytest.raises(PipelineError, match="insufficient respiratory cycles"):
            estimate_rr(series(np.zeros(900)))

    def test_degenerate_rate(self):
        with pytest.raises(PipelineError, match="no spectral bin inside the cardiac band"):
            estimate_hr(series(np.random.default_rng(0).normal(size=60), fs=1.5), None)

    def test_low_confidence_flag(self):
        x = np.random.default_rng(7).normal(size=1800)
        hr = estimate_hr(series(x), None)
        assert hr.low_confidence == (hr.peak_snr_db < 3.0)

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.7), st.floats(0.5, 3.5))
    def test_band_contracts(self, seed, f_resp, f_card):
        rng = np.random.default_rng(seed)
        x = tone(f_resp, 40.0, amp=rng.uniform(0, 5)) + tone(f_card, 40.0, amp=rng.uniform(0, 2))
        x = x + rng.normal(0, rng.uniform(0.01, 3.0), x.size)
        try:
            rr = estimate_rr(series(x))
            assert 6.0 <= rr.value <= 30.0
        except PipelineError:
            pass
        hr = estimate_hr(series(x), f_resp)
        assert 54.0 <= hr.value <= 180.0


class TestProcessCube:
    def test_report(self, clean_record):
        cube, gt = clean_record
        rep = process_cube(cube)
        assert abs(rep.rr - 15) <= 0.5 and abs(rep.hr - 72) <= 3
        assert rep.selected_bin == (23, 32)
        assert rep.selected_range_m == pytest.approx(23 * 0.0299792458)
        d = rep.as_dict()
        assert {"rr_bpm", "hr_bpm", "hrv_rmssd", "brv_mibi", "hr_low_confidence"} <= set(d)

    def test_gain_does_not_change_estimates(self):
        cfg = RadarConfig(n_chirps=16)
        sd = calibrate_noise_sd(10.0, cfg)
        cube, _ = synthesize_cube(cfg, Scenario(noise_sd=sd), PhysioProfile(seed=1), 30.0, seed=1)
        a = process_cube(cube)
        b = process_cube(cube.scaled(10.0))
        assert b.selected_bin == a.selected_bin
        assert b.rr == pytest.approx(a.rr, rel=1e-6)
        assert b.hr == pytest.approx(a.hr, rel=1e-6)

    def test_majority_vote(self, clean_record):
        rep = process_cube(clean_record[0], PipelineParams(vote_every=300))
        assert rep.selected_bin == (23, 32)

    def test_all_zero_cube(self):
        cube = DataCube(RadarConfig(n_chirps=4), np.zeros((700, 3, 4, 128), np.complex64))
        with pytest.raises(PipelineError, match="no feasible bins"):
            process_cube(cube)
