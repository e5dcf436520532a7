"""Pool-based annotation protocol: seeded pool initialization, per-round
reset/retrain, uncertainty or random acquisition, validation growth in step
with the labelled pool, and round reports.

Pools hold positions into the training split (the test split never enters
any pool).  All index sets are kept sorted so every downstream draw is
order-deterministic.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, SPLIT_TEST, SPLIT_TRAIN_POOL
from .evidential import aleatoric_uncertainty, evidence_from_logits, image_uncertainty
from .model import (ClassifierSpec, as_tensors, forward, init_model,
                    reset_to_snapshot, save_checkpoint)
from .training import RoundConfig, TrainedRound, evaluate, train_round

logger = logging.getLogger("evidal")

_TAG_POOL_INIT = 11
_TAG_COVERAGE = 12
_TAG_RANDOM_SCORE = 13
_TAG_VAL_GROWTH = 14


@dataclass
class PoolState:
    labelled: np.ndarray
    unlabelled: np.ndarray
    validation: np.ndarray
    budget_fraction: float
    round_index: int = 0

    def sizes(self) -> tuple[int, int, int]:
        return len(self.labelled), len(self.unlabelled), len(self.validation)


@dataclass
class RoundReport:
    round_index: int
    budget_fraction: float
    method: str
    sampler: str
    seed: int
    n_labelled: int
    n_unlabelled: int
    n_validation: int
    epochs_run: int
    model_choice: str
    reported_flavor: str
    best_val_auroc_raw: float
    best_val_auroc_ema: float
    macro_auroc: float
    macro_auprc: float
    per_class_auroc: dict[int, float] = field(default_factory=dict)
    per_class_auprc: dict[int, float] = field(default_factory=dict)
    skipped_classes: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def budget_size(fraction: float, corpus_size: int) -> int:
    """Floor of fraction * corpus_size, robust to the float representation of
    decimal fractions (0.06 * 20000 must give 1200, not 1199)."""
    x = fraction * corpus_size
    nearest = round(x)
    return nearest if abs(x - nearest) < 1e-6 else math.floor(x)


def validation_target(n_labelled: int, val_ratio: float) -> int:
    return math.ceil(n_labelled / val_ratio)


def init_pools(corpus_size: int, fractions: tuple[float, ...], val_ratio: float,
               seed: int) -> PoolState:
    """Seeded uniform draw of the first labelled budget and its validation
    pool; the remainder is unlabelled."""
    if not fractions:
        raise ValueError("init_pools: empty budget schedule")
    n_lab = budget_size(fractions[0], corpus_size)
    n_val = validation_target(n_lab, val_ratio)
    if n_lab < 1:
        raise ValueError("init_pools: first budget yields an empty labelled pool")
    if n_lab + n_val > corpus_size:
        raise ValueError(
            f"init_pools: budget {n_lab}+{n_val} exceeds corpus {corpus_size}")
    rng = np.random.default_rng((seed, _TAG_POOL_INIT))
    perm = rng.permutation(corpus_size)
    return PoolState(
        labelled=np.sort(perm[:n_lab]),
        unlabelled=np.sort(perm[n_lab + n_val:]),
        validation=np.sort(perm[n_lab:n_lab + n_val]),
        budget_fraction=fractions[0],
    )


def class_coverage(labels: np.ndarray, labelled: np.ndarray) -> np.ndarray:
    """Per-class flag: does the labelled pool hold at least one positive?"""
    return labels[labelled].any(axis=0)


def enforce_coverage(pool: PoolState, labels: np.ndarray, seed: int) -> int:
    """Move random unlabelled samples into the labelled pool until every
    class has a positive example (or the pool runs dry); returns the number
    of extra annotations."""
    rng = np.random.default_rng((seed, _TAG_COVERAGE))
    moved = 0
    while not class_coverage(labels, pool.labelled).all():
        if len(pool.unlabelled) == 0:
            logger.warning("coverage enforcement exhausted the unlabelled pool")
            break
        pick = pool.unlabelled[rng.integers(len(pool.unlabelled))]
        pool.labelled = np.sort(np.append(pool.labelled, pick))
        pool.unlabelled = pool.unlabelled[pool.unlabelled != pick]
        moved += 1
    return moved


def score_pool(spec: ClassifierSpec, params: dict[str, np.ndarray],
               features: np.ndarray, unlabelled: np.ndarray, sampler: str,
               seed: int, round_index: int, aggregation: str = "mean"
               ) -> dict[int, float]:
    """Acquisition scores for the unlabelled pool, keyed by sample index."""
    if len(unlabelled) == 0:
        raise ValueError("score_pool: unlabelled pool is empty")
    unlabelled = np.sort(np.asarray(unlabelled))
    if sampler == "random":
        rng = np.random.default_rng((seed, _TAG_RANDOM_SCORE, round_index))
        values = rng.random(len(unlabelled))
    elif sampler == "au":
        logits = forward(spec, as_tensors(params, requires_grad=False),
                         features[unlabelled]).data
        per_class = aleatoric_uncertainty(evidence_from_logits(logits))
        values = image_uncertainty(per_class, aggregation)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return {int(i): float(v) for i, v in zip(unlabelled, values)}


def select_for_annotation(scores: dict[int, float], k: int) -> list[int]:
    """Indices of the k highest scores; ties resolve to the smaller index."""
    if k < 0 or k > len(scores):
        raise ValueError(f"select_for_annotation: k={k} outside pool of {len(scores)}")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [idx for idx, _ in ranked[:k]]


def grow_validation(pool: PoolState, val_ratio: float, seed: int,
                    round_index: int) -> int:
    """Top up the validation pool to ceil(L_T / ratio) with random unlabelled
    samples; returns how many moved."""
    need = validation_target(len(pool.labelled), val_ratio) - len(pool.validation)
    if need <= 0:
        return 0
    if need > len(pool.unlabelled):
        raise ValueError(
            f"grow_validation: need {need} samples, pool has {len(pool.unlabelled)}")
    rng = np.random.default_rng((seed, _TAG_VAL_GROWTH, round_index))
    chosen = rng.choice(pool.unlabelled, size=need, replace=False)
    pool.validation = np.sort(np.concatenate([pool.validation, chosen]))
    pool.unlabelled = np.setdiff1d(pool.unlabelled, chosen)
    return need


def _annotate(pool: PoolState, chosen: list[int]) -> None:
    chosen_arr = np.asarray(chosen, dtype=pool.labelled.dtype)
    pool.labelled = np.sort(np.concatenate([pool.labelled, chosen_arr]))
    pool.unlabelled = np.setdiff1d(pool.unlabelled, chosen_arr)


def run_active_learning(cfg: ExperimentConfig, dataset: Dataset, seed: int,
                        out_dir: Path | None = None) -> list[RoundReport]:
    """Full annotation protocol for one seed; returns one report per budget.

    When ``out_dir`` is given, epoch logs, round reports, a run summary and
    the final-round checkpoint are persisted there; partial artifacts survive
    a failed round.
    """
    cfg.validate()
    fractions = cfg.fractions()
    train_rows = dataset.indices(SPLIT_TRAIN_POOL)
    test_rows = dataset.indices(SPLIT_TEST)
    feats = dataset.features[train_rows]
    labs = dataset.labels[train_rows]
    x_test = dataset.features[test_rows]
    y_test = dataset.labels[test_rows]

    spec = ClassifierSpec(
        input_dim=dataset.n_features,
        num_classes=dataset.n_classes,
        hidden_dims=tuple(cfg.hidden_dims),
        dropout_rate=cfg.resolved_dropout(),
    )
    n_nets = 2 if cfg.method == "enot" else 1
    models = [init_model(spec, 1000 * (seed + 1) + i) for i in range(n_nets)]
    rcfg = RoundConfig(
        method=cfg.method,
        optimizer=cfg.optimizer,
        weights=cfg.resolved_weights(),
        vat=cfg.vat,
        augment_strength=cfg.augment_strength,
        feature_scale=feats.std(axis=0),
        emt_labelled_consistency=cfg.emt_labelled_consistency,
    )

    pool = init_pools(len(train_rows), fractions, cfg.val_ratio, seed)
    if cfg.enforce_class_coverage:
        extra = enforce_coverage(pool, labs, seed)
        if extra:
            logger.info("coverage enforcement added %d annotations", extra)
            grow_validation(pool, cfg.val_ratio, seed, 0)
    elif not class_coverage(labs, pool.labelled).all():
        missing = np.flatnonzero(~class_coverage(labs, pool.labelled)).tolist()
        logger.warning("initial pool lacks positives for classes %s", missing)

    epoch_log = (out_dir / "epoch_log.jsonl") if out_dir else None
    rounds_path = (out_dir / "rounds.jsonl") if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        for stale in ("epoch_log.jsonl", "rounds.jsonl"):
            (out_dir / stale).unlink(missing_ok=True)

    reports: list[RoundReport] = []
    last_trained: TrainedRound | None = None
    for round_index, fraction in enumerate(fractions):
        pool.round_index = round_index
        pool.budget_fraction = fraction
        for m in models:
            reset_to_snapshot(m)
        trained = train_round(models, rcfg, pool.labelled, pool.validation,
                              pool.unlabelled, feats, labs, seed, round_index)
        last_trained = trained
        if epoch_log:
            with epoch_log.open("a", encoding="utf-8") as fh:
                for row in trained.epoch_rows:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")

        raw_rank = -np.inf if np.isnan(trained.best_val_auroc_raw) else trained.best_val_auroc_raw
        ema_rank = -np.inf if np.isnan(trained.best_val_auroc_ema) else trained.best_val_auroc_ema
        model_choice = "ema" if ema_rank > raw_rank else "raw"

        _, bundle_raw = evaluate(spec, trained.best_params, x_test, y_test)
        _, bundle_ema = evaluate(spec, trained.best_ema, x_test, y_test)
        reported_flavor = ("ema" if _nan_low(bundle_ema.macro_auroc) >
                          _nan_low(bundle_raw.macro_auroc) else "raw")
        bundle = bundle_ema if reported_flavor == "ema" else bundle_raw

        report = RoundReport(
            round_index=round_index,
            budget_fraction=fraction,
            method=cfg.method,
            sampler=cfg.sampler,
            seed=seed,
            n_labelled=len(pool.labelled),
            n_unlabelled=len(pool.unlabelled),
            n_validation=len(pool.validation),
            epochs_run=trained.epochs_run,
            model_choice=model_choice,
            reported_flavor=reported_flavor,
            best_val_auroc_raw=trained.best_val_auroc_raw,
            best_val_auroc_ema=trained.best_val_auroc_ema,
            macro_auroc=bundle.macro_auroc,
            macro_auprc=bundle.macro_auprc,
            per_class_auroc=bundle.per_class_auroc,
            per_class_auprc=bundle.per_class_auprc,
            skipped_classes=bundle.skipped_classes,
        )
        reports.append(report)
        if rounds_path:
            with rounds_path.open("a", encoding="utf-8") as fh:
                fh.write(report.to_json() + "\n")

        if round_index + 1 < len(fractions):
            target = budget_size(fractions[round_index + 1], len(train_rows))
            k = max(0, target - len(pool.labelled))
            if k > 0:
                chosen_params = (trained.best_ema if model_choice == "ema"
                                 else trained.best_params)
                scores = score_pool(spec, chosen_params, feats, pool.unlabelled,
                                    cfg.sampler, seed, round_index,
                                    cfg.aggregation)
                _annotate(pool, select_for_annotation(scores, k))
            grow_validation(pool, cfg.val_ratio, seed, round_index + 1)

    if out_dir and last_trained is not None:
        final = models[0]
        final.params = last_trained.best_params
        final.ema_params = last_trained.best_ema
        save_checkpoint(final, out_dir / "checkpoint_final.evck")
        _write_run_summary(out_dir, cfg, seed, reports,
                           dataset.prevalence(SPLIT_TEST))
    return reports


def _nan_low(v: float) -> float:
    return -np.inf if np.isnan(v) else v


def _write_run_summary(out_dir: Path, cfg: ExperimentConfig, seed: int,
                       reports: list[RoundReport],
                       test_prevalence: np.ndarray) -> None:
    summary = {
        "method": cfg.method,
        "sampler": cfg.sampler,
        "seed": seed,
        "budgets": [r.budget_fraction for r in reports],
        "macro_auroc": [r.macro_auroc for r in reports],
        "macro_auprc": [r.macro_auprc for r in reports],
        "reported_flavor": [r.reported_flavor for r in reports],
        "n_labelled": [r.n_labelled for r in reports],
        "test_prevalence": [float(p) for p in test_prevalence],
        "final_per_class_auroc": {str(k): v for k, v in
                                  reports[-1].per_class_auroc.items()},
    }
    path = out_dir / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
