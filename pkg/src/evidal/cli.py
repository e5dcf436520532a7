"""Command-line front end: dataset generation, experiment runs, reports.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Configuration comes from an optional JSON file plus flag overrides (flags
win); each run persists its fully resolved config for bitwise reruns.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import data as data_mod
from .active import run_active_learning
from .config import ConfigError, ExperimentConfig
from .reporting import ReportError, RunRecord, emit_reports, load_run
from .training import TrainingDiverged

logger = logging.getLogger("evidal")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evidal",
        description="Evidential semi-supervised active learning simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--method", choices=("esup", "epsu", "evat", "emt", "enot"))
        p.add_argument("--sampler", choices=("au", "random"))
        p.add_argument("--regime", choices=("low", "mid", "custom"))
        p.add_argument("--seeds", metavar="N[,N...]",
                       help="comma-separated seed list")
        p.add_argument("--out", metavar="DIR", help="output directory root")
        p.add_argument("--data", metavar="PATH", help="dataset csv path")
        p.add_argument("--enforce-class-coverage", action="store_true",
                       default=None,
                       help="extend initial sampling until every class has a "
                            "labelled positive")
        p.add_argument("--aggregation", choices=("mean", "sum", "max"),
                       help="per-image aggregation of class uncertainties")

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(gen)

    run = sub.add_parser("run", help="run the active learning experiment")
    common(run)

    rep = sub.add_parser("report", help="aggregate completed runs into tables "
                                        "and figures")
    rep.add_argument("runs", nargs="+", metavar="RUN_DIR",
                     help="run directories (or parents of them)")
    rep.add_argument("--out", metavar="DIR", help="report output directory")
    rep.add_argument("--baseline", default="esup+random",
                     metavar="METHOD+SAMPLER", help="baseline group for gains")
    return parser


def _load_effective(args: argparse.Namespace) -> ExperimentConfig:
    cfg = (config_mod.load_config(args.config) if args.config
           else ExperimentConfig())
    cfg = config_mod.apply_overrides(
        cfg,
        method=args.method,
        sampler=args.sampler,
        regime=args.regime,
        seeds=_parse_seeds(args.seeds) if args.seeds else None,
        out_dir=args.out,
        data_path=args.data,
        enforce_class_coverage=args.enforce_class_coverage,
        aggregation=args.aggregation,
    )
    cfg.validate()
    return cfg


def _cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _load_effective(args)
    dataset = data_mod.generate(cfg.synth)
    dest = Path(cfg.data_path) if cfg.data_path else cfg.resolved_out_dir() / "dataset.csv"
    data_mod.save_csv(dataset, dest)
    print(f"wrote {dataset.features.shape[0]} rows to {dest}")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_effective(args)
    if cfg.data_path:
        dataset = data_mod.load_csv(cfg.data_path)
    else:
        dataset = data_mod.generate(cfg.synth)
    out_root = cfg.resolved_out_dir()
    for seed in cfg.seeds:
        run_dir = out_root / f"{cfg.method}+{cfg.sampler}" / f"seed-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        per_seed = dataclasses.replace(cfg, seeds=[seed],
                                       out_dir=str(out_root))
        config_mod.save_config(per_seed, run_dir / "effective_config.json")
        reports = run_active_learning(cfg, dataset, seed, out_dir=run_dir)
        final = reports[-1]
        print(f"{cfg.method}+{cfg.sampler} seed {seed}: "
              f"{len(reports)} rounds, final macro AUROC "
              f"{final.macro_auroc:.4f} ({final.reported_flavor})")
    return EXIT_OK


def _discover_runs(paths: list[str]) -> list[RunRecord]:
    records = []
    for entry in paths:
        root = Path(entry)
        if (root / "summary.json").exists():
            records.append(load_run(root))
            continue
        nested = sorted(root.glob("**/summary.json"))
        if not nested:
            raise ReportError(f"{entry}: no completed runs found")
        for summary in nested:
            records.append(load_run(summary.parent))
    return records


def _cmd_report(args: argparse.Namespace) -> int:
    from .figures import render_budget_curves, render_class_gains

    records = _discover_runs(args.runs)
    out_dir = Path(args.out) if args.out else Path("reports")
    written = emit_reports(records, out_dir, baseline=args.baseline)
    written.append(render_budget_curves(records, out_dir / "budget_curves.png"))
    if any(r.group == args.baseline for r in records):
        written.append(render_class_gains(records, args.baseline,
                                          out_dir / "class_gains.png"))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ReportError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
