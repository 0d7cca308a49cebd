"""Command line interface: ``peakflow run | verify | energy | synth``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import FrameworkConfig, PeakflowError, load_config, validate_config
from .peaks import compute_threshold
from .pipeline import (
    STATUS_FAILED,
    EnergyModel,
    ManifestEntry,
    estimate_energy,
    read_manifest,
    run_batch,
    write_manifest,
)
from .synth import generate, load_specs, write_catchment
from .verify import build_report


def _cmd_run(args) -> int:
    config = load_config(args.config) if args.config else FrameworkConfig()
    if args.seed is not None:
        config = config.replace(rng_seed=args.seed)
    manifest = read_manifest(args.manifest)
    if args.pilot:
        wanted = [s.strip() for s in args.pilot.split(",") if s.strip()]
        known = {e.catchment_id for e in manifest}
        unknown = [w for w in wanted if w not in known]
        if unknown:
            raise PeakflowError(f"pilot ids not in manifest: {unknown}")
        manifest = [e for e in manifest if e.catchment_id in wanted]
    results, aggregate = run_batch(manifest, config, args.out, args.workers, args.dump_features)
    for r in results:
        line = f"{r.catchment_id}\t{r.status}\t{r.wall_seconds:.1f}s"
        if r.reason:
            line += f"\t{r.reason}"
        print(line)
    if args.pilot:
        for key in ("nse", "kge", "kge_mod", "abs_rpe", "timing_error"):
            s = aggregate.get(key)
            if s:
                print(f"{key}: median={s['median']} mean={s['mean']} n={s['n']}")
        print("binary:", json.dumps(aggregate.get("binary")))
    return 1 if any(r.status == STATUS_FAILED for r in results) else 0


def _read_forecast_csv(path):
    ts, obs, fused = [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"timestamp", "observed", "fused"}
        if not need <= set(reader.fieldnames or ()):
            raise PeakflowError(f"{path}: forecast CSV needs columns {sorted(need)}")
        for row in reader:
            ts.append(row["timestamp"])
            obs.append(float(row["observed"]))
            fused.append(float(row["fused"]))
    return ts, np.array(obs), np.array(fused)


def _cmd_verify(args) -> int:
    _, obs, fused = _read_forecast_csv(args.forecast)
    config = load_config(args.config) if args.config else FrameworkConfig()
    if args.threshold is not None:
        threshold, source = args.threshold, "argument"
    else:
        # no training data here: fall back to the observed sample itself
        threshold, source = compute_threshold(obs, config.peak_quantile), "observed-quantile"
        logging.getLogger(__name__).warning(
            "no --threshold given; using the %.4f quantile of the observed column", config.peak_quantile
        )
    cid = args.catchment_id or Path(args.forecast).stem
    report = build_report(cid, fused, obs, threshold, config.max_offset, {"threshold_source": source})
    text = report.to_json(args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def _cmd_energy(args) -> int:
    model = EnergyModel(args.p_high, args.p_low, args.w_high)
    per_task, total = estimate_energy(model, args.seconds, args.tasks)
    print(json.dumps({
        "p_mean_w": model.p_mean,
        "per_task_kwh": per_task,
        "cumulative_kwh": total,
        "tasks": args.tasks,
        "seconds": args.seconds,
    }))
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out)
    entries = []
    for spec in load_specs(args.spec):
        series = generate(spec)
        rain, q = write_catchment(series, out)
        entries.append(ManifestEntry(series.catchment_id, rain.name, q.name))
        print(f"{series.catchment_id}\t{len(series)} steps\t{rain}\t{q}")
    write_manifest(out / "manifest.csv", entries)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peakflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train, forecast and verify every catchment in a manifest")
    p.add_argument("--manifest", required=True, help="CSV: catchment_id,rain_path,q_path")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="override rng_seed")
    p.add_argument("--pilot", default=None, help="comma-separated catchment ids to run as a pilot")
    p.add_argument("--dump-features", action="store_true", help="also write the feature matrices as CSV")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="score a forecast CSV")
    p.add_argument("--forecast", required=True)
    p.add_argument("--out", default=None, help="report JSON path (stdout if omitted)")
    p.add_argument("--threshold", type=float, default=None, help="peak threshold in m3/s")
    p.add_argument("--config", default=None)
    p.add_argument("--catchment-id", default=None)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("energy", help="per-task and cumulative energy estimate")
    p.add_argument("--p-high", type=float, default=130.0)
    p.add_argument("--p-low", type=float, default=60.0)
    p.add_argument("--w-high", type=float, default=0.33)
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--tasks", type=int, required=True)
    p.set_defaults(func=_cmd_energy)

    p = sub.add_parser("synth", help="write synthetic catchments and a manifest")
    p.add_argument("--spec", required=True, help="JSON object or list of synthetic specs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PeakflowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
