"""Aggregate run artifacts into fixed-format tables and a summary.

Outputs: budget_curves.csv (one row per method/sampler/seed/budget),
class_gains.csv (per-class final-budget AUROC gains vs a baseline, classes
ordered by test prevalence), and summary.json (mean +- std curves per
method+sampler group).  Real values print with 6 decimals; file content is a
pure function of the inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BUDGET_CURVES_HEADER = "method,sampler,seed,budget,macro_auroc,macro_auprc"


@dataclass
class RunRecord:
    """One completed run (single method, sampler and seed)."""
    method: str
    sampler: str
    seed: int
    budgets: list[float]
    macro_auroc: list[float]
    macro_auprc: list[float]
    test_prevalence: list[float]
    final_per_class_auroc: dict[int, float]
    path: str = ""

    @property
    def group(self) -> str:
        return f"{self.method}+{self.sampler}"


class ReportError(ValueError):
    pass


def load_run(run_dir: str | Path) -> RunRecord:
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise ReportError(f"{run_dir}: missing summary.json (incomplete run?)")
    raw = json.loads(summary_path.read_text(encoding="utf-8"))
    return RunRecord(
        method=raw["method"],
        sampler=raw["sampler"],
        seed=int(raw["seed"]),
        budgets=[float(b) for b in raw["budgets"]],
        macro_auroc=[float(v) for v in raw["macro_auroc"]],
        macro_auprc=[float(v) for v in raw["macro_auprc"]],
        test_prevalence=[float(p) for p in raw["test_prevalence"]],
        final_per_class_auroc={int(k): float(v)
                               for k, v in raw["final_per_class_auroc"].items()},
        path=str(run_dir),
    )


def _check_compatible(runs: list[RunRecord]) -> None:
    if not runs:
        raise ReportError("no runs to report")
    ref = runs[0]
    for run in runs[1:]:
        if run.budgets != ref.budgets:
            raise ReportError(
                f"{run.path}: budget grid {run.budgets} differs from "
                f"{ref.path}: {ref.budgets}")
        if len(run.test_prevalence) != len(ref.test_prevalence):
            raise ReportError(
                f"{run.path}: class count differs from {ref.path}")


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def budget_curves_rows(runs: list[RunRecord]) -> list[str]:
    rows = []
    for run in sorted(runs, key=lambda r: (r.method, r.sampler, r.seed)):
        for budget, auroc_v, auprc_v in zip(run.budgets, run.macro_auroc,
                                            run.macro_auprc):
            rows.append(",".join([run.method, run.sampler, str(run.seed),
                                  _fmt(budget), _fmt(auroc_v), _fmt(auprc_v)]))
    return rows


def class_gain_table(runs: list[RunRecord], baseline: str,
                     order: str = "desc") -> tuple[list[int], list[str], np.ndarray]:
    """Per-class AUROC gains (in percent) over the baseline group at the
    final budget, seed-averaged; classes ordered by test prevalence.

    Returns (class ids in order, group names, gains matrix K x groups).
    """
    if order not in ("asc", "desc"):
        raise ReportError(f"order must be asc or desc, got {order!r}")
    _check_compatible(runs)
    groups: dict[str, list[RunRecord]] = {}
    for run in runs:
        groups.setdefault(run.group, []).append(run)
    if baseline not in groups:
        raise ReportError(
            f"baseline {baseline!r} not among runs {sorted(groups)}")

    n_classes = len(runs[0].test_prevalence)

    def group_mean(records: list[RunRecord]) -> np.ndarray:
        acc = np.full((len(records), n_classes), np.nan)
        for i, rec in enumerate(records):
            for cls, v in rec.final_per_class_auroc.items():
                acc[i, cls] = v
        with np.errstate(invalid="ignore"):
            return np.nanmean(acc, axis=0)

    base = group_mean(groups[baseline])
    prevalence = np.asarray(runs[0].test_prevalence)
    class_order = np.argsort(-prevalence if order == "desc" else prevalence,
                             kind="stable")
    names = sorted(groups)
    gains = np.full((n_classes, len(names)), np.nan)
    for j, name in enumerate(names):
        gains[:, j] = (group_mean(groups[name]) - base) * 100.0
    return class_order.tolist(), names, gains[class_order]


def summarize(runs: list[RunRecord]) -> dict:
    _check_compatible(runs)
    groups: dict[str, list[RunRecord]] = {}
    for run in runs:
        groups.setdefault(run.group, []).append(run)
    out: dict = {"budgets": runs[0].budgets, "groups": {}}
    for name in sorted(groups):
        records = groups[name]
        auroc_m = np.array([r.macro_auroc for r in records])
        auprc_m = np.array([r.macro_auprc for r in records])
        out["groups"][name] = {
            "seeds": sorted(r.seed for r in records),
            "macro_auroc_mean": [float(v) for v in auroc_m.mean(axis=0)],
            "macro_auroc_std": [float(v) for v in auroc_m.std(axis=0)],
            "macro_auprc_mean": [float(v) for v in auprc_m.mean(axis=0)],
            "macro_auprc_std": [float(v) for v in auprc_m.std(axis=0)],
        }
    return out


def emit_reports(runs: list[RunRecord], out_dir: str | Path,
                 baseline: str | None = None, order: str = "desc") -> list[Path]:
    """Write the three report files; class gains are skipped (with a note in
    the summary) when the baseline group is absent."""
    _check_compatible(runs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    curves = out_dir / "budget_curves.csv"
    curves.write_text("\n".join([BUDGET_CURVES_HEADER, *budget_curves_rows(runs)])
                      + "\n", encoding="utf-8")
    written.append(curves)

    summary = summarize(runs)
    groups = {run.group for run in runs}
    baseline = baseline or "esup+random"
    if baseline in groups:
        class_order, names, gains = class_gain_table(runs, baseline, order)
        prevalence = runs[0].test_prevalence
        header = ["class", "prevalence", *names]
        lines = [",".join(header)]
        for row, cls in enumerate(class_order):
            cells = [str(cls), _fmt(prevalence[cls])]
            cells += [_fmt(v) for v in gains[row]]
            lines.append(",".join(cells))
        gains_path = out_dir / "class_gains.csv"
        gains_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(gains_path)
        summary["baseline"] = baseline
    else:
        summary["baseline"] = None
        summary["note"] = (f"class gains skipped: baseline {baseline!r} "
                           "not among runs")

    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    written.append(summary_path)
    return written
