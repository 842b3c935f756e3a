"""Command line front end: run one scenario or sweep several, writing
metrics CSVs and a machine-readable manifest."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from . import metrics
from .engine import run_experiment
from .scenarios import PRESETS, ConfigInvalid, ScenarioConfig, load_scenario, preset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROPERTIES = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="partsim",
        description="Deterministic round-based simulator for a partition-"
                    "tolerant ledger.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    _common(run)
    grp = run.add_mutually_exclusive_group(required=True)
    grp.add_argument("--preset", choices=PRESETS)
    grp.add_argument("--config", metavar="FILE",
                     help="YAML scenario description")

    sweep = sub.add_parser("sweep", help="run several presets back to back")
    _common(sweep)
    sweep.add_argument("--presets", default=",".join(PRESETS),
                       help="comma-separated preset names")
    return ap


def _common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--runs", type=int, default=1)
    ap.add_argument("--rounds", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=None, help="number of peers")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--mining-model",
                    choices=("uniform-completion", "per-round-bernoulli"),
                    default=None)
    ap.add_argument("--check-properties", action="store_true",
                    help="run end-of-run ledger checks; violations exit 3")
    ap.add_argument("--trace", action="store_true",
                    help="write a per-run event trace")


def _load(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        if args.n:
            raise ConfigInvalid(
                "--n cannot resize a YAML scenario; edit the file")
        cfg = load_scenario(args.config)
    else:
        cfg = preset(args.preset, n=args.n) if args.n else preset(args.preset)
    cfg = cfg.with_overrides(rounds=args.rounds,
                             mining_model=args.mining_model,
                             trace=True if args.trace else None)
    cfg.validate()
    return cfg


def _run_scenario(cfg: ScenarioConfig, args) -> tuple[int, dict]:
    results = []
    violations: list[str] = []
    for i in range(args.runs):
        run_cfg = cfg.with_overrides(seed=args.seed + i)
        res = run_experiment(run_cfg)
        results.append(res)
        if args.check_properties:
            report = metrics.check_properties(res, progress_cutoff=None)
            violations += [f"run {i}: {v}" for v in report.violations]
    rows = metrics.aggregate(results)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"{cfg.name}.csv")
    metrics.write_csv(csv_path, cfg.name, args.runs, rows)
    if args.trace:
        trace_path = os.path.join(args.out, f"{cfg.name}.trace.txt")
        with open(trace_path, "w") as fh:
            for i, res in enumerate(results):
                for line in res.trace:
                    fh.write(f"{i} {line}\n")
    entry = {
        "scenario": cfg.name,
        "csv": os.path.basename(csv_path),
        "runs": args.runs,
        "rounds": cfg.rounds,
        "peers": cfg.n,
        "base_seed": args.seed,
        "detector": cfg.detector.kind,
        "events": cfg.event_markers(),
        "violations": violations,
    }
    for v in violations:
        print(f"property violation [{cfg.name}]: {v}", file=sys.stderr)
    code = EXIT_PROPERTIES if violations else EXIT_OK
    return code, entry


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            configs = [_load(args)]
        else:
            names = [s for s in args.presets.split(",") if s]
            configs = []
            for name in names:
                cfg = preset(name, n=args.n) if args.n else preset(name)
                cfg = cfg.with_overrides(rounds=args.rounds,
                                         mining_model=args.mining_model,
                                         trace=True if args.trace else None)
                cfg.validate()
                configs.append(cfg)
    except (ConfigInvalid, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    worst = EXIT_OK
    entries = []
    for cfg in configs:
        code, entry = _run_scenario(cfg, args)
        entries.append(entry)
        worst = max(worst, code)
        print(f"{cfg.name}: wrote {entry['csv']} "
              f"({args.runs} run{'s' if args.runs != 1 else ''})")
    manifest = {"scenarios": entries, "columns": list(metrics.CSV_COLUMNS)}
    path = os.path.join(args.out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
