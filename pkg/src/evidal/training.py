"""One annotation round of training: Adam, plateau LR decay, early stopping,
EMA upkeep, and best-validation-AUROC checkpoint selection.

Epochs are passes over the labelled set.  Semi-supervised methods draw an
equally sized unlabelled batch per step from a seeded cycling shuffle.  The
validation loss driving the plateau scheduler and early stopping is the
supervised evidential loss of the primary network on raw weights, evaluated
with the regulariser fully annealed so the monitored quantity means the same
thing at every epoch; checkpoint selection instead tracks validation AUROC,
separately for raw and EMA weights.  All randomness flows from tuple-seeded
generators, so identical inputs give bitwise-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .data import augment
from .evidential import evidence_from_logits, predictive_mean
from .losses import (LossWeights, VatConfig, emt_loss, enot_loss, epsu_loss,
                     esup_loss, evat_loss)
from .metrics import MetricsBundle, compute_bundle
from .model import ClassifierSpec, ModelState, as_tensors, clone_params, ema_update, forward
from .losses import vat_perturbation

SUPERVISED_METHODS = ("esup",)
SSL_METHODS = ("epsu", "evat", "emt", "enot")
METHODS = SUPERVISED_METHODS + SSL_METHODS

# purpose tags for tuple-seeded generators
_TAG_SHUFFLE = 1
_TAG_UNLABELLED = 2
_TAG_DROPOUT = 3
_TAG_AUGMENT = 4
_TAG_VAT = 5


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, context: dict):
        super().__init__(f"{message} ({context})")
        self.context = context


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.1
    lr_patience: int = 5
    early_stop_patience: int = 15
    max_epochs: int = 100
    batch_size: int = 64
    ema_decay: float = 0.999
    teacher_ema_decay: float = 0.91

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2 must be in [0, 1)")
        if self.lr_patience <= 0 or self.early_stop_patience <= 0:
            raise ValueError("patience values must be positive")
        if self.max_epochs <= 0 or self.batch_size <= 0:
            raise ValueError("max_epochs and batch_size must be positive")
        if not (0 <= self.ema_decay <= 1 and 0 <= self.teacher_ema_decay <= 1):
            raise ValueError("EMA decays must be in [0, 1]")
        if self.weight_decay < 0 or not 0 < self.lr_decay_factor <= 1:
            raise ValueError("weight_decay >= 0 and lr_decay_factor in (0, 1] required")


@dataclass
class RoundConfig:
    method: str
    optimizer: OptimizerConfig
    weights: LossWeights
    vat: VatConfig
    augment_strength: float = 0.5
    feature_scale: np.ndarray | float = 1.0
    emt_labelled_consistency: bool = True


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class TrainedRound:
    best_params: dict[str, np.ndarray]
    best_ema: dict[str, np.ndarray]
    best_val_auroc_raw: float
    best_val_auroc_ema: float
    epoch_rows: list[dict] = field(default_factory=list)
    epochs_run: int = 0
    final_lr: float = 0.0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: OptimizerConfig, lr: float,
              context: dict | None = None) -> None:
    """In-place Adam with additive L2 decay folded into the gradient."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient for {k}", context or {})
        g = g + cfg.weight_decay * p
        m = state.m[k]
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


def _labelled_batches(labelled: np.ndarray, batch_size: int,
                      rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(labelled)
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


def _unlabelled_cycler(unlabelled: np.ndarray,
                       rng: np.random.Generator) -> Iterator[int]:
    while True:
        yield from rng.permutation(unlabelled)


def _take(cycler: Iterator[int], n: int) -> np.ndarray:
    return np.fromiter((next(cycler) for _ in range(n)), dtype=np.int64, count=n)


def predict_scores(spec: ClassifierSpec, params: dict[str, np.ndarray],
                   features: np.ndarray) -> np.ndarray:
    """Eval-mode positive-class probabilities (N, K)."""
    logits = forward(spec, as_tensors(params, requires_grad=False), features).data
    return predictive_mean(evidence_from_logits(logits))[..., 0]


def evaluate(spec: ClassifierSpec, params: dict[str, np.ndarray],
             features: np.ndarray, labels: np.ndarray
             ) -> tuple[np.ndarray, MetricsBundle]:
    scores = predict_scores(spec, params, features)
    return scores, compute_bundle(scores, labels)


# The monitored validation loss is the supervised evidential loss with the
# regulariser held at its fully annealed weight, whatever the current training
# epoch: the anneal schedule would otherwise change the definition of the
# monitored quantity from epoch to epoch and confuse the plateau logic.
_VAL_LOSS_EPOCH = 10


def _supervised_eval_loss(spec: ClassifierSpec, params: dict[str, np.ndarray],
                          x: np.ndarray, y: np.ndarray) -> float:
    logits = forward(spec, as_tensors(params, requires_grad=False), x)
    return esup_loss(logits, y, _VAL_LOSS_EPOCH).item()


def _macro_auroc(spec: ClassifierSpec, params: dict[str, np.ndarray],
                 x: np.ndarray, y: np.ndarray) -> float:
    _, bundle = evaluate(spec, params, x, y)
    return bundle.macro_auroc


def _ranked(value: float) -> float:
    return -np.inf if np.isnan(value) else value


def _step_loss(rcfg: RoundConfig, models: list[ModelState],
               tensors: list[dict[str, ad.Tensor]],
               teacher: dict[str, np.ndarray] | None,
               x_l: np.ndarray, y_l: np.ndarray, x_u: np.ndarray | None,
               epoch: int, rng_drop: np.random.Generator,
               rng_aug: np.random.Generator, rng_vat: np.random.Generator,
               ) -> tuple[ad.Tensor, int]:
    spec = models[0].spec
    strength = rcfg.augment_strength
    scale = rcfg.feature_scale

    def view(x: np.ndarray) -> np.ndarray:
        return augment(x, strength, rng_aug, scale)

    method = rcfg.method
    fallbacks = 0
    if method == "esup":
        logits = forward(spec, tensors[0], view(x_l), train_mode=True, rng=rng_drop)
        loss = esup_loss(logits, y_l, epoch)
    elif method == "epsu":
        loss = epsu_loss(spec, tensors[0], view(x_l), y_l, view(x_u), epoch,
                         rng=rng_drop)
    elif method == "evat":
        arrays = {k: t.data for k, t in tensors[0].items()}
        r_adv, fallbacks = vat_perturbation(spec, arrays, x_u, rcfg.vat, rng_vat)
        loss = evat_loss(spec, tensors[0], view(x_l), y_l, x_u, rcfg.vat,
                         rcfg.weights, epoch, rng=rng_drop, r_adv=r_adv)
    elif method == "emt":
        base = np.concatenate([x_l, x_u]) if rcfg.emt_labelled_consistency else x_u
        loss = emt_loss(spec, tensors[0], {k: ad.Tensor(v) for k, v in teacher.items()},
                        view(x_l), y_l, view(base), view(base),
                        rcfg.weights, epoch, rng=rng_drop)
    elif method == "enot":
        loss = enot_loss(spec, tensors[0], tensors[1],
                         view(x_l), view(x_l), y_l, view(x_u), view(x_u),
                         rcfg.weights, epoch, rng=rng_drop)
    else:
        raise ValueError(f"unknown method {method!r}")
    return loss, fallbacks


def train_round(models: list[ModelState], rcfg: RoundConfig,
                labelled: np.ndarray, validation: np.ndarray,
                unlabelled: np.ndarray, features: np.ndarray,
                labels: np.ndarray, seed: int, round_index: int) -> TrainedRound:
    """Train for one annotation round and return the best raw/EMA weights of
    the primary network with the epoch log."""
    cfg = rcfg.optimizer
    cfg.validate()
    rcfg.weights.validate()
    if len(labelled) == 0:
        raise ValueError("train_round: labelled pool is empty")
    labelled = np.sort(np.asarray(labelled, dtype=np.int64))
    validation = np.sort(np.asarray(validation, dtype=np.int64))
    unlabelled = np.sort(np.asarray(unlabelled, dtype=np.int64))
    x_val, y_val = features[validation], labels[validation]
    primary = models[0]
    spec = primary.spec
    needs_unlabelled = rcfg.method in SSL_METHODS

    teacher = clone_params(primary.params) if rcfg.method == "emt" else None
    opt_states = [AdamState.like(m.params) for m in models]
    cycler = _unlabelled_cycler(
        unlabelled, np.random.default_rng((seed, _TAG_UNLABELLED, round_index))
    ) if needs_unlabelled and len(unlabelled) else None

    lr = cfg.learning_rate
    best_val_loss = np.inf
    epochs_since_best = 0
    epochs_since_decay_ref = 0
    best_raw = (-np.inf, clone_params(primary.params))
    best_ema = (-np.inf, clone_params(primary.ema_params))
    result = TrainedRound(best_params={}, best_ema={},
                          best_val_auroc_raw=np.nan, best_val_auroc_ema=np.nan)

    for epoch in range(1, cfg.max_epochs + 1):
        rng_shuffle = np.random.default_rng((seed, _TAG_SHUFFLE, round_index, epoch))
        rng_drop = np.random.default_rng((seed, _TAG_DROPOUT, round_index, epoch))
        rng_aug = np.random.default_rng((seed, _TAG_AUGMENT, round_index, epoch))
        rng_vat = np.random.default_rng((seed, _TAG_VAT, round_index, epoch))
        step_losses = []
        vat_fallbacks = 0
        for step, batch in enumerate(_labelled_batches(labelled, cfg.batch_size, rng_shuffle)):
            x_l, y_l = features[batch], labels[batch]
            x_u = features[_take(cycler, len(batch))] if cycler is not None else None
            tensors = [as_tensors(m.params, requires_grad=True) for m in models]
            try:
                loss, fb = _step_loss(rcfg, models, tensors, teacher, x_l, y_l,
                                      x_u, epoch, rng_drop, rng_aug, rng_vat)
                ad.backward(loss)
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(str(exc), {
                    "round": round_index, "epoch": epoch, "step": step}) from exc
            vat_fallbacks += fb
            context = {"round": round_index, "epoch": epoch, "step": step}
            for mdl, tns, opt in zip(models, tensors, opt_states):
                grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                         for k, t in tns.items()}
                adam_step(mdl.params, grads, opt, cfg, lr, context)
                ema_update(mdl, cfg.ema_decay)
            if teacher is not None:
                for k, p in primary.params.items():
                    teacher[k] *= cfg.teacher_ema_decay
                    teacher[k] += (1.0 - cfg.teacher_ema_decay) * p
            step_losses.append(loss.item())

        val_loss = _supervised_eval_loss(spec, primary.params, x_val, y_val)
        val_auroc_raw = _macro_auroc(spec, primary.params, x_val, y_val)
        val_auroc_ema = _macro_auroc(spec, primary.ema_params, x_val, y_val)
        row = {"round": round_index, "epoch": epoch, "lr": lr,
               "train_loss": float(np.mean(step_losses)),
               "val_loss": val_loss,
               "val_auroc_raw": val_auroc_raw,
               "val_auroc_ema": val_auroc_ema}
        if rcfg.method == "evat":
            row["vat_fallbacks"] = vat_fallbacks
        result.epoch_rows.append(row)
        result.epochs_run = epoch

        if _ranked(val_auroc_raw) > best_raw[0]:
            best_raw = (_ranked(val_auroc_raw), clone_params(primary.params))
        if _ranked(val_auroc_ema) > best_ema[0]:
            best_ema = (_ranked(val_auroc_ema), clone_params(primary.ema_params))

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            epochs_since_best = 0
            epochs_since_decay_ref = 0
        else:
            epochs_since_best += 1
            epochs_since_decay_ref += 1
        if epochs_since_best >= cfg.early_stop_patience:
            break
        if epochs_since_decay_ref >= cfg.lr_patience:
            lr *= cfg.lr_decay_factor
            epochs_since_decay_ref = 0

    result.best_params = best_raw[1]
    result.best_ema = best_ema[1]
    result.best_val_auroc_raw = best_raw[0] if np.isfinite(best_raw[0]) else np.nan
    result.best_val_auroc_ema = best_ema[0] if np.isfinite(best_ema[0]) else np.nan
    result.final_lr = lr
    return result
