"""Time-domain heart and breathing rate variability metrics.

RMSSD here divides the sum of the N-1 squared successive differences by
N-1, i.e. it is the root mean square of the differences.  pNN50 is
normalised by the number of difference pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

NN50_THRESHOLD = 0.050  # s
BBI_PLAUSIBLE = (1.5, 10.0)  # s
_EPS = 1e-9  # keeps float round-off from deciding |diff| > 50 ms ties


class InsufficientIntervals(ValueError):
    pass


@dataclass(frozen=True)
class IntervalSequence:
    intervals: np.ndarray
    kind: str = "cardiac"

    def __post_init__(self):
        if self.kind not in ("cardiac", "respiratory"):
            raise ValueError("kind must be 'cardiac' or 'respiratory'")
        x = np.asarray(self.intervals, dtype=float)
        if x.ndim != 1:
            raise ValueError("intervals must be one-dimensional")
        if np.any(x <= 0) or not np.all(np.isfinite(x)):
            raise ValueError("intervals must be finite and positive")
        object.__setattr__(self, "intervals", x)


@dataclass(frozen=True)
class HrvReport:
    mean_ibi: float
    sdnn: float
    rmssd: float
    pnn50: float


@dataclass(frozen=True)
class BrvReport:
    mibi: float
    sdbb: float
    rmssd_bbi: float


IntervalsLike = Union[IntervalSequence, Sequence[float], np.ndarray]


def _as_array(seq: IntervalsLike, kind: str) -> np.ndarray:
    if isinstance(seq, IntervalSequence):
        return seq.intervals
    return IntervalSequence(np.asarray(seq, dtype=float), kind).intervals


def _mean_sd_rmssd(x: np.ndarray) -> tuple[float, float, float]:
    n = x.size
    mean = float(np.mean(x))
    sd = float(np.sqrt(np.sum((x - mean) ** 2) / (n - 1)))
    rmssd = float(np.sqrt(np.sum(np.diff(x) ** 2) / (n - 1)))
    return mean, sd, rmssd


def hrv_metrics(seq: IntervalsLike) -> HrvReport:
    """Mean IBI, SDNN, RMSSD (s) and pNN50 (%) of an inter-beat sequence."""
    x = _as_array(seq, "cardiac")
    if x.size < 2:
        raise InsufficientIntervals(f"insufficient intervals: {x.size} < 2")
    mean, sdnn, rmssd = _mean_sd_rmssd(x)
    nn50 = int(np.count_nonzero(np.abs(np.diff(x)) > NN50_THRESHOLD + _EPS))
    return HrvReport(mean_ibi=mean, sdnn=sdnn, rmssd=rmssd, pnn50=100.0 * nn50 / (x.size - 1))


def breath_interval_stats(intervals: IntervalsLike) -> BrvReport:
    """MIBI, SDBB and RMSSD_BBI of an already screened breath sequence."""
    x = _as_array(intervals, "respiratory")
    if x.size < 2:
        raise InsufficientIntervals(f"insufficient intervals: {x.size} < 2")
    mibi, sdbb, rmssd = _mean_sd_rmssd(x)
    return BrvReport(mibi=mibi, sdbb=sdbb, rmssd_bbi=rmssd)


def screen_breath_intervals(raw, bounds=BBI_PLAUSIBLE, mad_k: float = 3.0):
    """Drop implausible and outlying breath intervals.

    Intervals outside ``bounds`` go first; the survivors outside
    ``median +/- mad_k * MAD`` (MAD scaled to a normal SD) go next.  A zero
    MAD disables the outlier step.

    Returns the kept intervals and a dict counting each rejection reason.
    """
    x = np.asarray(raw, dtype=float)
    lo, hi = bounds
    short = x < lo
    long_ = x > hi
    kept = x[~short & ~long_]
    outliers = np.zeros(kept.size, dtype=bool)
    if kept.size >= 3 and mad_k is not None:
        med = np.median(kept)
        mad = 1.4826 * np.median(np.abs(kept - med))
        if mad > 0:
            outliers = np.abs(kept - med) > mad_k * mad
    counts = {"too_short": int(short.sum()), "too_long": int(long_.sum()),
              "outliers": int(outliers.sum())}
    return kept[~outliers], counts


def brv_metrics(raw_intervals, bounds=BBI_PLAUSIBLE, mad_k: float = 3.0) -> tuple[BrvReport, int]:
    """Breathing variability after plausibility gating and outlier rejection.

    Returns
    -------
    (BrvReport, int)
        Metrics over the surviving intervals and the number discarded.
    """
    kept, counts = screen_breath_intervals(raw_intervals, bounds, mad_k)
    if kept.size < 2:
        raise InsufficientIntervals(
            f"insufficient intervals: {kept.size} of {np.size(raw_intervals)} survive "
            f"(too short {counts['too_short']}, too long {counts['too_long']}, "
            f"outliers {counts['outliers']})")
    return breath_interval_stats(kept), sum(counts.values())


def percent_error(estimate: float, truth: float) -> float:
    if truth == 0:
        return float("nan")
    return 100.0 * abs(estimate - truth) / abs(truth)
