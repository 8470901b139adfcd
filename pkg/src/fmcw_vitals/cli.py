"""``fmcw-vitals`` command line.

Exit status: 0 success, 1 usage error, 2 parse error (cube or reference
CSV), 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import harness
from .cubefile import CubeFileError, read_cube, write_cube
from .physio import PhysioProfile, Scenario, synthesize_cube
from .pipeline import PipelineError, PipelineParams, process_cube
from .radar import RadarConfig

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_PIPELINE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")


def _add_radar_flags(p):
    g = p.add_argument_group("radar")
    g.add_argument("--chirps", type=int, default=128, help="chirps per frame")
    g.add_argument("--samples", type=int, default=128, help="ADC samples per chirp")
    g.add_argument("--frame-rate", type=float, default=30.0, help="frames per second")
    g.add_argument("--rx", type=int, default=3, help="receive channels")
    g.add_argument("--chirp-time", type=float, default=124e-6, help="chirp repetition time (s)")


def _add_noise_flags(p):
    g = p.add_argument_group("noise")
    g.add_argument("--snr-db", type=float, default=harness.DEFAULT_SNR_DB,
                   help="single-chirp cell SNR at 0.70 m used to set the noise level")
    g.add_argument("--noise-sd", type=float, default=None,
                   help="receiver noise SD; overrides --snr-db")


def _add_profile_flags(p):
    g = p.add_argument_group("physiology")
    g.add_argument("--hr", type=float, default=72.0, help="mean heart rate (bpm)")
    g.add_argument("--rr", type=float, default=15.0, help="mean respiratory rate (bpm)")
    g.add_argument("--cardiac-mm", type=float, default=1.0, help="cardiac amplitude (mm)")
    g.add_argument("--resp-mm", type=float, default=10.0, help="respiratory amplitude (mm)")
    g.add_argument("--ibi-jitter", type=float, default=0.040, help="inter-beat jitter SD (s)")
    g.add_argument("--bbi-jitter", type=float, default=0.300, help="breath interval jitter SD (s)")


def _config(args) -> RadarConfig:
    return RadarConfig(n_chirps=args.chirps, n_adc_samples=args.samples,
                       frame_interval=1.0 / args.frame_rate, n_rx=args.rx,
                       chirp_repetition_time=args.chirp_time)


def _profile(args, seed: int) -> PhysioProfile:
    return PhysioProfile(mean_hr=args.hr, mean_rr=args.rr,
                         cardiac_amplitude=args.cardiac_mm * 1e-3,
                         resp_amplitude=args.resp_mm * 1e-3,
                         ibi_jitter_sd=args.ibi_jitter, bbi_jitter_sd=args.bbi_jitter, seed=seed)


def _noise_sd(args, config: RadarConfig) -> float:
    if args.noise_sd is not None:
        if args.noise_sd < 0:
            raise UsageError("--noise-sd must be >= 0")
        return args.noise_sd
    if math.isinf(args.snr_db) and args.snr_db > 0:
        return 0.0
    return harness.calibrate_noise_sd(args.snr_db, config)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fmcw-vitals", description="FMCW radar vital-sign simulation and estimation")
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--output-dir", type=Path, default=Path("."), help="directory for outputs")
    p.add_argument("--format", choices=("csv", "human"), default="human", help="stdout format")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesize a cube file and its ground-truth sidecar")
    s.add_argument("--output", default="cube.rdc", help="cube file name inside --output-dir")
    s.add_argument("--duration", type=float, default=120.0, help="record length (s)")
    s.add_argument("--distance", type=float, default=0.70, help="subject distance (m)")
    s.add_argument("--azimuth-deg", type=float, default=0.0, help="subject azimuth (deg)")
    s.add_argument("--rcs", type=float, default=1.0, help="radar cross-section (m^2)")
    _add_radar_flags(s)
    _add_noise_flags(s)
    _add_profile_flags(s)

    s = sub.add_parser("process", help="estimate vitals from a cube file")
    s.add_argument("cube", type=Path)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--truth", type=Path, help="ground-truth sidecar JSON written by simulate")
    g.add_argument("--truth-csv", type=Path, help="reference-sensor CSV")
    s.add_argument("--vote-every", type=int, default=None,
                   help="reselect the bin every N frames and keep the majority cell")
    s.add_argument("--json", type=Path, default=None, help="also write the report as JSON")

    for name, help_ in (("sweep-distance", "error versus subject distance"),
                        ("sweep-chirps", "error versus chirps per frame")):
        s = sub.add_parser(name, help=help_)
        if name == "sweep-distance":
            s.add_argument("--distances", type=_float_list,
                           default=list(harness.DEFAULT_DISTANCES), help="comma-separated metres")
        else:
            s.add_argument("--chirp-list", type=_int_list, default=list(harness.DEFAULT_CHIRPS),
                           help="comma-separated chirp counts")
            s.add_argument("--paper-mode", action="store_true",
                           help="use 64 samples per chirp at 256 chirps")
        s.add_argument("--seeds", type=int, default=10, help="seeds per point (from --seed up)")
        s.add_argument("--duration", type=float, default=120.0, help="record length (s)")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--name", default=None, help="output file stem")
        _add_radar_flags(s)
        _add_noise_flags(s)
        _add_profile_flags(s)

    s = sub.add_parser("ingest-gt", help="reference rates from a belt/pulse sensor CSV")
    s.add_argument("csv", type=Path)
    return p


def _emit(pairs: list[tuple[str, object]], fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "csv":
        out.write("key,value\n")
        for k, v in pairs:
            out.write(f"{k},{v}\n")
    else:
        width = max(len(k) for k, _ in pairs)
        for k, v in pairs:
            out.write(f"{k:<{width}}  {v}\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def cmd_simulate(args) -> int:
    config = _config(args)
    scenario = Scenario(baseline_range=args.distance, azimuth=math.radians(args.azimuth_deg),
                        rcs=args.rcs, noise_sd=_noise_sd(args, config))
    profile = _profile(args, args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cube, gt = synthesize_cube(config, scenario, profile, args.duration, args.seed, lazy=True)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    path = args.output_dir / args.output
    nbytes = write_cube(path, cube)
    sidecar = path.with_suffix(path.suffix + ".json")
    doc = {
        "seed": args.seed,
        "config": asdict(config), "scenario": asdict(scenario), "profile": asdict(profile),
        "ground_truth": {"true_hr": gt.true_hr, "true_rr": gt.true_rr,
                         "ibi_seq": gt.ibi_seq, "bbi_seq": gt.bbi_seq,
                         "time": gt.time, "displacement": gt.displacement},
    }
    sidecar.write_text(json.dumps(_jsonable(doc)))
    print(f"wrote {path} ({cube.n_frames} frames, {nbytes} bytes) and {sidecar.name}; "
          f"true RR {gt.true_rr:.2f} bpm, HR {gt.true_hr:.2f} bpm")
    return EXIT_OK


def cmd_process(args) -> int:
    cf = read_cube(args.cube)
    truth = None
    if args.truth is not None:
        try:
            gt = json.loads(args.truth.read_text())["ground_truth"]
            truth = (gt["true_rr"], gt["true_hr"])
        except (OSError, ValueError, KeyError) as e:
            raise harness.GroundTruthError(f"unreadable sidecar {args.truth}: {e}") from None
    elif args.truth_csv is not None:
        ref = harness.ingest_ground_truth(args.truth_csv)
        truth = (ref.rr, ref.hr)
    params = PipelineParams(vote_every=args.vote_every)
    report = process_cube(cf.cube, params)
    d = report.as_dict()
    notes = d.pop("notes")
    if truth is not None:
        d["rr_abs_error_bpm"] = abs(report.rr - truth[0])
        d["hr_abs_error_bpm"] = abs(report.hr - truth[1])
    pairs = [(k, f"{v:.6g}" if isinstance(v, float) else v) for k, v in d.items()]
    pairs.append(("notes", "; ".join(notes)))
    _emit(pairs, args.format)
    if args.json is not None:
        d["notes"] = notes
        (args.output_dir / args.json if not args.json.is_absolute() else args.json).write_text(
            json.dumps(_jsonable(d), indent=2))
    return EXIT_OK


def _cmd_sweep(args, axis: str) -> int:
    if args.seeds < harness.MIN_SEEDS:
        raise UsageError(f"--seeds must be >= {harness.MIN_SEEDS}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    config = _config(args)
    seeds = range(args.seed, args.seed + args.seeds)
    settings = harness.RunSettings(duration=args.duration, profile=_profile(args, args.seed))
    if args.noise_sd is not None and args.noise_sd < 0:
        raise UsageError("--noise-sd must be >= 0")
    if axis == "distance":
        if len(args.distances) < 2:
            raise UsageError("--distances needs at least two values")
        result = harness.sweep_distance(args.distances, seeds, config, args.snr_db, settings,
                                        args.jobs, noise_sd=args.noise_sd)
    else:
        if not args.chirp_list or min(args.chirp_list) < 8:
            raise UsageError("--chirp-list values must be >= 8")
        result = harness.sweep_chirps(args.chirp_list, seeds, config, args.snr_db, settings,
                                      args.paper_mode, args.jobs, noise_sd=args.noise_sd)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    stem = args.name or f"sweep_{axis}"
    csv_path = args.output_dir / f"{stem}.csv"
    svg_path = args.output_dir / f"{stem}.svg"
    harness.write_sweep_csv(result, csv_path)
    harness.plot_sweep_csv(csv_path, svg_path)
    if args.format == "csv":
        sys.stdout.write(csv_path.read_text())
    else:
        for row in result.rows():
            flag = "  FAILED" if row["failed"] else ""
            print(f"{row['axis']}={row['value']:g}: RR MAE {row['rr_mae_bpm']:.2f}"
                  f" +/- {row['rr_sd_bpm']:.2f}, HR MAE {row['hr_mae_bpm']:.2f}"
                  f" +/- {row['hr_sd_bpm']:.2f}, HR failures {row['hr_failure_fraction']:.0%}{flag}")
        print(f"wrote {csv_path} and {svg_path}")
    return EXIT_OK


def cmd_ingest_gt(args) -> int:
    ref = harness.ingest_ground_truth(args.csv)
    _emit([("reference_rr_bpm", f"{ref.rr:.6g}"), ("reference_hr_bpm", f"{ref.hr:.6g}"),
           ("n_bbi", ref.bbi.size), ("n_ibi", ref.ibi.size)], args.format)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "process": cmd_process,
    "sweep-distance": lambda a: _cmd_sweep(a, "distance"),
    "sweep-chirps": lambda a: _cmd_sweep(a, "chirps"),
    "ingest-gt": cmd_ingest_gt,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CubeFileError, harness.GroundTruthError) as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except PipelineError as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return EXIT_PIPELINE
    except (UsageError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
