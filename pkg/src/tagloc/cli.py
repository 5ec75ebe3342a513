"""Command-line driver: simulate scenarios, run the localization pipeline,
score estimates against ground truth, and sweep scenario grids.

Exit codes: 0 success, 1 input error (files, configs), 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_pipeline_config, load_scenario, parse_kv
from .errors import ConfigError, StageError, TagLocError, TraceFormatError
from .pipeline import (
    dump_stage,
    estimates_to_records,
    load_estimates,
    receiver_from_truth,
    run_pipeline,
    save_estimates,
    score_positions,
)
from .simulate import GroundTruth, simulate
from .traceio import (
    load_trace,
    load_truth_records,
    save_trace,
    save_truth_records,
    truth_sidecar_path,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_STAGE = 2


def cmd_simulate(args) -> int:
    scenario = load_scenario(Path(args.config))
    trace, truth = simulate(scenario)
    out = Path(args.out)
    save_trace(trace, out)
    save_truth_records(truth.to_records(stride=args.truth_stride), truth_sidecar_path(out))
    print(f"wrote {len(trace)} frames to {out} (+ {truth_sidecar_path(out).name})")
    return EXIT_OK


def cmd_localize(args) -> int:
    trace = load_trace(Path(args.trace))
    cfg = load_pipeline_config(Path(args.config)) if args.config else load_pipeline_config("")
    truth_path = Path(args.truth) if args.truth else truth_sidecar_path(args.trace)
    if not truth_path.exists():
        raise TraceFormatError(
            f"receiver poses required: no ground-truth sidecar at {truth_path}"
        )
    truth = GroundTruth.from_records(load_truth_records(truth_path))
    result = run_pipeline(trace, receiver_from_truth(truth), cfg)
    save_estimates(result.locations, Path(args.out))
    if args.dump_stage:
        paths = dump_stage(result, trace, args.dump_stage, args.dump_dir or Path(args.out).parent)
        for p in paths:
            print(f"dumped {p}")
    print(f"wrote {len(result.locations)} estimates to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    est = load_estimates(Path(args.estimates))
    truth = GroundTruth.from_records(load_truth_records(Path(args.truth)))
    metrics = score_positions(est, truth)
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2) + "\n")
    print(
        f"windows={metrics['count']} median={metrics['median']:.3f} m "
        f"mean={metrics['mean']:.3f} m p90={metrics['p90']:.3f} m"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    text = Path(args.config).read_text()
    kv = parse_kv(text)
    speeds = [float(v) for v in kv.pop("sweep.speeds", "1.0").split(",")]
    snrs = [float(v) for v in kv.pop("sweep.snrs", "20").split(",")]
    bandwidths = [float(v) for v in kv.pop("sweep.bandwidths", "40e6").split(",")]
    base = "\n".join(f"{k} = {v}" for k, v in kv.items())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for speed in speeds:
        for snr in snrs:
            for bw in bandwidths:
                text = base + f"\nreceiver.speed = {speed}\nsnr_db = {snr}\ngrid.bandwidth = {bw}\n"
                scenario = load_scenario(text)
                trace, truth = simulate(scenario)
                try:
                    result = run_pipeline(trace, receiver_from_truth(truth), load_pipeline_config(""))
                    metrics = score_positions(estimates_to_records(result.locations), truth)
                    rows.append(
                        {"speed": speed, "snr_db": snr, "bandwidth": bw, **{
                            k: metrics[k] for k in ("count", "median", "mean", "p90")
                        }}
                    )
                except StageError as exc:
                    rows.append(
                        {"speed": speed, "snr_db": snr, "bandwidth": bw,
                         "error": f"stage {exc.stage}: {exc}"}
                    )
                print(f"speed={speed} snr={snr} bw={bw/1e6:.0f}MHz -> {rows[-1]}")
    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagloc",
        description="Peer-to-peer backscatter-assisted localization pipeline and simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a CSI trace + ground-truth sidecar")
    p.add_argument("config", help="scenario config file (flat key = value)")
    p.add_argument("out", help="output trace path")
    p.add_argument("--truth-stride", type=int, default=10, help="truth record subsampling")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("localize", help="run the full pipeline on a trace")
    p.add_argument("trace", help="input trace path")
    p.add_argument("out", help="output estimates path (JSON lines)")
    p.add_argument("--config", help="pipeline config file")
    p.add_argument("--truth", help="ground-truth sidecar (default: <trace>.truth)")
    p.add_argument(
        "--dump-stage",
        choices=["decode", "separate", "spectral", "doppler", "range", "align"],
        help="emit per-stage diagnostics CSV",
    )
    p.add_argument("--dump-dir", help="directory for stage dumps")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("score", help="score estimates against ground truth")
    p.add_argument("estimates", help="estimates file (JSON lines)")
    p.add_argument("truth", help="ground-truth sidecar")
    p.add_argument("--out", help="metrics JSON output path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", help="run a scenario grid and aggregate metrics")
    p.add_argument("config", help="base scenario config with sweep.* keys")
    p.add_argument("out", help="output directory")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error in stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, TraceFormatError, FileNotFoundError, TagLocError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
