from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List

from .config import AblationConfig
from .config import ScenarioConfig
from .config import TrackerConfig
from .config import dump_document
from .config import load_document
from .errors import ParseError
from .errors import TrackingError
from .metrics import evaluate
from .metrics import format_table
from .pipeline import median_mota
from .pipeline import run_ablation
from .pipeline import write_scenario
from .records import emit_tracks
from .records import eval_frames
from .records import ingest
from .records import read_calibration
from .records import read_ground_truth
from .records import read_tracks
from .tracker import MultiClassTracker
from .tracker import track_frames

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE_ERROR = 2
EXIT_RUNTIME_ERROR = 3

ABLATION_FILE = "ablation.csv"
ABLATION_SUMMARY_FILE = "summary.csv"


def _write_csv(rows: List[Dict[str, Any]], stream) -> None:
    if not rows:
        return
    writer = csv.DictWriter(stream, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    for r in rows:
        writer.writerow(r)


def _write_rows(rows: List[Dict[str, Any]], path: str | None, fmt: str = "csv") -> None:
    if path is None:
        return
    with open(path, "w", newline="", encoding="utf-8") as f:
        if fmt == "json":
            json.dump(rows, f, indent=2, sort_keys=True, default=_json_default)
            f.write("\n")
        else:
            _write_csv(rows, f)


def _json_default(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    return str(value)


def _load_tracker_config(path: str | None) -> TrackerConfig:
    if path is None:
        return TrackerConfig.from_env()
    return TrackerConfig.from_env(TrackerConfig.from_file(path))


def cmd_simulate(args: argparse.Namespace) -> int:
    """Generate a synthetic scene and write it as input files."""
    document = load_document(args.config) if args.config else {}
    scenario = ScenarioConfig.from_dict(document)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    paths = write_scenario(args.out, scenario)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_track(args: argparse.Namespace) -> int:
    """Run the tracker over a detection file."""
    config = _load_tracker_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, filter=dataclasses.replace(config.filter, seed=args.seed))
    calibration = read_calibration(args.calib)
    config = calibration.configure(config)
    frames = ingest(args.detections, calibration)
    with MultiClassTracker(config, calibration.cameras, use_lidar=calibration.has_lidar) as tracker:
        estimates = track_frames(tracker, frames)
        if args.emit_plots:
            Path(args.emit_plots).mkdir(parents=True, exist_ok=True)
            _write_rows(
                [{"frame": k, "tracks": len(v)} for k, v in sorted(estimates.items())],
                str(Path(args.emit_plots) / "cardinality.csv"),
            )
        logger.info(f"Tracker stats: {tracker.get_stats()}")
    count = emit_tracks(estimates, args.out)
    print(f"wrote {count} track records for {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Score tracks against ground truth."""
    sequence = eval_frames(read_ground_truth(args.gt), read_tracks(args.tracks))
    results = evaluate(sequence, args.radius, args.recall_points)
    print(format_table(results))
    rows = [dict(s.to_row(scope)) for scope, s in results.items()]
    if args.out and args.format == "table":
        Path(args.out).write_text(format_table(results) + "\n", encoding="utf-8")
    else:
        _write_rows(rows, args.out, args.format)
    if args.emit_plots:
        Path(args.emit_plots).mkdir(parents=True, exist_ok=True)
        _write_rows(rows, str(Path(args.emit_plots) / "metrics_by_class.csv"))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    """Compare camera-only, LiDAR-only and fused tracking on simulated scenes."""
    document = load_document(args.config) if args.config else {}
    tracker_config = TrackerConfig.from_env(TrackerConfig.from_dict(document))
    scenario = ScenarioConfig.from_dict(document)
    ablation = AblationConfig.from_dict(document)
    modes = tuple(args.mode) if args.mode else ablation.modes
    seeds = tuple(args.seeds) if args.seeds else ablation.seeds
    rows = run_ablation(tracker_config, scenario, seeds, modes)
    table = [{"mode": r.mode, "seed": r.seed, **dict(r.summary.to_row("overall"))} for r in rows]
    medians = median_mota(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(table, str(out / ABLATION_FILE))
        _write_rows([{"mode": m, "median_mota": v} for m, v in medians.items()], str(out / ABLATION_SUMMARY_FILE))
    for mode, value in medians.items():
        print(f"{mode:<12} median MOTA {value:.3f}")
    return EXIT_OK


def cmd_config_show(args: argparse.Namespace) -> int:
    """Print the effective configuration."""
    document = load_document(args.config) if args.config else {}
    tracker_config = TrackerConfig.from_env(TrackerConfig.from_dict(document))
    merged = {**tracker_config.to_dict(), **ScenarioConfig.from_dict(document).to_dict()}
    print(dump_document(merged, args.format))
    return EXIT_OK


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msglmb", description="Multi-sensor labeled multi-object tracker")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("-v", "--verbose", action="store_true", help="Shorthand for --log-level INFO")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_sim = sub.add_parser("simulate", help="Generate a synthetic scene")
    p_sim.add_argument("--config", help="YAML/TOML/JSON document with a scenario section")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", required=True, help="Output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_track = sub.add_parser("track", help="Track detections")
    p_track.add_argument("--config")
    p_track.add_argument("--detections", required=True)
    p_track.add_argument("--calib", required=True)
    p_track.add_argument("--out", required=True)
    p_track.add_argument("--seed", type=int)
    p_track.add_argument("--emit-plots", dest="emit_plots", help="Directory for plot-ready CSV files")
    p_track.set_defaults(func=cmd_track)

    p_eval = sub.add_parser("evaluate", help="Score tracks against ground truth")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--tracks", required=True)
    p_eval.add_argument("--radius", type=float, default=2.0)
    p_eval.add_argument("--recall-points", dest="recall_points", type=int, default=40)
    p_eval.add_argument("--out")
    p_eval.add_argument("--format", choices=["table", "csv", "json"], default="csv")
    p_eval.add_argument("--emit-plots", dest="emit_plots")
    p_eval.set_defaults(func=cmd_evaluate)

    p_ablate = sub.add_parser("ablate", help="Sensor-subset ablation on simulated scenes")
    p_ablate.add_argument("--config")
    p_ablate.add_argument("--mode", action="append", choices=["camera-only", "lidar-only", "fused"])
    p_ablate.add_argument("--seeds", type=int, nargs="+")
    p_ablate.add_argument("--out", help="Output directory for ablation.csv and summary.csv")
    p_ablate.set_defaults(func=cmd_ablate)

    p_config = sub.add_parser("config", help="Configuration commands")
    config_sub = p_config.add_subparsers(dest="config_cmd", required=True)
    p_show = config_sub.add_parser("show", help="Show the effective configuration")
    p_show.add_argument("--config")
    p_show.add_argument("--format", choices=["yaml", "json"], default="yaml")
    p_show.set_defaults(func=cmd_config_show)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE_ERROR
    _configure_logging("INFO" if args.verbose and args.log_level == "WARNING" else args.log_level)
    try:
        return int(args.func(args))
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except (TrackingError, OSError, ImportError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
