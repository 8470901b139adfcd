"""Simulation and estimation toolkit for FMCW radar vital-sign monitoring."""

from .radar import DataCube, MapSettings, RadarConfig, RangeAzimuthMap, fft_1d, range_azimuth_map
from .physio import (GroundTruth, PhysioProfile, Scenario, chest_displacement,
                     generate_intervals, synthesize_cube)
from .pipeline import (BinSelectionParams, PhaseSeries, PipelineError, PipelineParams,
                       RateEstimate, VitalsReport, estimate_hr, estimate_rr, extract_phase,
                       process_cube, select_bin)
from .variability import (BrvReport, HrvReport, IntervalSequence, brv_metrics,
                          hrv_metrics)

__version__ = "0.1.0"
