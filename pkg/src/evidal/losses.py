"""Supervised evidential loss and its four semi-supervised extensions.

Per class head the supervised loss is

    (y+ - p+)^2 + (y- - p-)^2  +  [p+(1-p+) + p-(1-p-)] / (E + 1)
        + lambda_t * KL(Beta(adjusted) || Beta(1, 1))

with p the predictive mean, E the total evidence and lambda_t = min(1, t/10)
ramping only the divergence term.  Losses aggregate as mean over classes then
mean over the batch.

The four extensions add unlabelled signal to the same supervised core:
pseudo-labels (epsu), an adversarial-perturbation consistency (evat), a
student/EMA-teacher consistency (emt), and a two-network consistency (enot).
Consistency blocks share one form, L_err between the two predictors plus
L_var of each, and never carry the KL term.  Target branches are detached
where the cited formulas treat them as constants; consistency-branch
forwards run without dropout so two views disagree only through their
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .evidential import adjust_params, evidence_from_logits, kl_to_uniform, predictive_mean
from .model import ClassifierSpec, forward


@dataclass
class LossWeights:
    lambda_sup: float = 1.0
    lambda_cons: float = 1.0
    lambda_sup_1: float = 0.67
    lambda_sup_2: float = 0.67
    lambda_cons_l: float = 0.67
    lambda_cons_u: float = 1.0

    def validate(self) -> None:
        for name, v in vars(self).items():
            if v < 0.0:
                raise ValueError(f"LossWeights.{name} must be >= 0, got {v}")


@dataclass
class VatConfig:
    epsilon: float = 1.0
    xi: float = 1e-6
    power_iterations: int = 1

    def validate(self) -> None:
        if self.epsilon < 0.0:
            raise ValueError("VatConfig.epsilon must be >= 0")
        if self.xi <= 0.0 or self.power_iterations < 1:
            raise ValueError("VatConfig needs xi > 0 and >= 1 power iteration")


def anneal_coefficient(epoch: int) -> float:
    """KL ramp lambda_t = min(1, epoch/10); epochs count from 1."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    return min(1.0, epoch / 10.0)


def loss_err(y_pair, p_pair):
    """Squared error between a label pair and a predictor pair, per head."""
    diff = y_pair - p_pair
    if isinstance(diff, ad.Tensor):
        return ad.tsum(ad.square(diff), axis=-1)
    return np.square(diff).sum(axis=-1)


def loss_var(p_pair, total_evidence):
    """Predictor variance mass [p+(1-p+) + p-(1-p-)] / (E + 1), per head."""
    num = p_pair * (1.0 - p_pair)
    if isinstance(num, ad.Tensor):
        return ad.tsum(num, axis=-1) / (total_evidence + 1.0)
    return np.asarray(num).sum(axis=-1) / (total_evidence + 1.0)


def _pairs(y: np.ndarray) -> np.ndarray:
    """(B, K) binary labels -> (B, K, 2) one-hot [positive, negative]."""
    y = np.asarray(y, dtype=np.float64)
    return np.stack([y, 1.0 - y], axis=-1)


def _supervised_terms(logits: ad.Tensor, y: np.ndarray, epoch: int) -> ad.Tensor:
    """Per-head supervised loss (B, K) from raw logits."""
    y = np.asarray(y)
    if y.shape != logits.data.shape[:-1]:
        raise ValueError(
            f"labels shape {y.shape} does not match logits {logits.data.shape}")
    ab = evidence_from_logits(logits)
    total = ad.tsum(ab, axis=-1)
    p = predictive_mean(ab)
    err = loss_err(_pairs(y), p)
    var = loss_var(p, total)
    kl = kl_to_uniform(adjust_params(ab, y))
    return err + var + anneal_coefficient(epoch) * kl


def esup_loss(logits: ad.Tensor, y: np.ndarray, epoch: int) -> ad.Tensor:
    """Supervised evidential loss, mean over classes then batch."""
    return ad.tmean(_supervised_terms(logits, y, epoch))


def _consistency_terms(ab_a, ab_b) -> ad.Tensor:
    """L_err between the two predictive means + L_var of each side, (B, K).

    Either side may be a detached constant; KL never appears here.
    """
    p_a = predictive_mean(ab_a)
    p_b = predictive_mean(ab_b)
    total_a = _sum_last(ab_a)
    total_b = _sum_last(ab_b)
    return loss_err(p_a, p_b) + loss_var(p_a, total_a) + loss_var(p_b, total_b)


def _sum_last(x):
    if isinstance(x, ad.Tensor):
        return ad.tsum(x, axis=-1)
    return np.asarray(x).sum(axis=-1)


def pseudo_labels(logits_data: np.ndarray) -> np.ndarray:
    """Hard labels from the predictive mean: 1 iff p+ >= 0.5 (tie -> 1)."""
    ab = evidence_from_logits(np.asarray(logits_data))
    p = predictive_mean(ab)
    return (p[..., 0] >= 0.5).astype(np.int64)


def epsu_loss(spec: ClassifierSpec, params: dict[str, ad.Tensor],
              x_l: np.ndarray, y_l: np.ndarray, x_u: np.ndarray, epoch: int,
              rng: np.random.Generator | None = None, train_mode: bool = True,
              labels_u: np.ndarray | None = None) -> ad.Tensor:
    """Supervised loss plus the same loss on pseudo-labelled unlabelled data.

    Pseudo-labels come from the unlabelled forward itself with the gradient
    blocked through the label; pass ``labels_u`` to pin them externally.
    """
    logits_l = forward(spec, params, x_l, train_mode=train_mode, rng=rng)
    total = esup_loss(logits_l, y_l, epoch)
    if x_u is None or len(x_u) == 0:
        return total
    logits_u = forward(spec, params, x_u, train_mode=train_mode, rng=rng)
    if labels_u is None:
        labels_u = pseudo_labels(logits_u.data)
    return total + esup_loss(logits_u, labels_u, epoch)


def vat_perturbation(spec: ClassifierSpec, params: dict[str, np.ndarray],
                     x_u: np.ndarray, cfg: VatConfig,
                     rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Adversarial direction of the consistency term, scaled to radius eps.

    Power iteration: starting from a random unit direction d, take the input
    gradient of the consistency between the (detached) clean prediction and
    the prediction at x + xi*d, renormalize, repeat.  Rows whose gradient
    vanishes keep their random direction; the count of such rows is returned
    for the run log.
    """
    cfg.validate()
    x_u = np.asarray(x_u, dtype=np.float64)
    if cfg.epsilon == 0.0:
        return np.zeros_like(x_u), 0
    const_params = {k: ad.Tensor(v) for k, v in params.items()}
    ab_clean = evidence_from_logits(forward(spec, const_params, x_u).data)
    direction = rng.standard_normal(x_u.shape)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    fallbacks = 0
    for _ in range(cfg.power_iterations):
        probe = ad.Tensor(x_u + cfg.xi * direction, requires_grad=True)
        ab_adv = evidence_from_logits(forward(spec, const_params, probe))
        objective = ad.tmean(_consistency_terms(ab_clean, ab_adv))
        ad.backward(objective)
        grad = probe.grad
        norms = np.linalg.norm(grad, axis=1, keepdims=True)
        dead = norms == 0.0
        fallbacks = int(dead.sum())
        direction = np.where(dead, direction, grad / np.where(dead, 1.0, norms))
    return cfg.epsilon * direction, fallbacks


def evat_loss(spec: ClassifierSpec, params: dict[str, ad.Tensor],
              x_l: np.ndarray, y_l: np.ndarray, x_u: np.ndarray,
              cfg: VatConfig, weights: LossWeights, epoch: int,
              rng: np.random.Generator | None = None, train_mode: bool = True,
              r_adv: np.ndarray | None = None,
              ab_clean: np.ndarray | None = None) -> ad.Tensor:
    """Supervised loss plus adversarial consistency on unlabelled samples.

    The clean branch is a detached target; only the perturbed branch carries
    gradient.  ``r_adv`` and ``ab_clean`` may be precomputed (gradient checks
    pin both); otherwise they derive from the current parameter values.
    """
    logits_l = forward(spec, params, x_l, train_mode=train_mode, rng=rng)
    total = esup_loss(logits_l, y_l, epoch)
    if weights.lambda_cons == 0.0 or x_u is None or len(x_u) == 0:
        return total
    arrays = {k: t.data for k, t in params.items()}
    if r_adv is None:
        r_adv, _ = vat_perturbation(spec, arrays, x_u, cfg,
                                    rng if rng is not None else np.random.default_rng(0))
    if ab_clean is None:
        const_params = {k: ad.Tensor(v) for k, v in arrays.items()}
        ab_clean = evidence_from_logits(forward(spec, const_params, x_u).data)
    ab_adv = evidence_from_logits(forward(spec, params, np.asarray(x_u) + r_adv))
    cons = ad.tmean(_consistency_terms(ab_adv, ab_clean))
    return total + weights.lambda_cons * cons


def emt_loss(spec: ClassifierSpec, student: dict[str, ad.Tensor],
             teacher: dict[str, ad.Tensor],
             x_l: np.ndarray, y_l: np.ndarray,
             x_cons_student: np.ndarray, x_cons_teacher: np.ndarray,
             weights: LossWeights, epoch: int,
             rng: np.random.Generator | None = None,
             train_mode: bool = True) -> ad.Tensor:
    """Supervised student loss plus student/teacher consistency.

    ``x_cons_student`` and ``x_cons_teacher`` are the two augmented views of
    the same consistency batch (labelled and unlabelled inputs combined by
    the caller).  The teacher branch is detached: no gradient reaches
    teacher parameters.
    """
    logits_l = forward(spec, student, x_l, train_mode=train_mode, rng=rng)
    total = esup_loss(logits_l, y_l, epoch)
    if weights.lambda_cons == 0.0 or len(x_cons_student) == 0:
        return total
    ab_s = evidence_from_logits(forward(spec, student, x_cons_student))
    ab_t = evidence_from_logits(
        ad.detach(forward(spec, teacher, x_cons_teacher)))
    cons = ad.tmean(_consistency_terms(ab_s, ab_t))
    return total + weights.lambda_cons * cons


def enot_loss(spec: ClassifierSpec, params_1: dict[str, ad.Tensor],
              params_2: dict[str, ad.Tensor],
              x_l_1: np.ndarray, x_l_2: np.ndarray, y_l: np.ndarray,
              x_u_1: np.ndarray, x_u_2: np.ndarray,
              weights: LossWeights, epoch: int,
              rng: np.random.Generator | None = None,
              train_mode: bool = True) -> ad.Tensor:
    """Two jointly trained networks coupled by labelled and unlabelled
    consistency; gradient flows into both.

    Inputs with suffix 1/2 are the per-network augmented views of the same
    labelled (resp. unlabelled) batch.
    """
    logits_1 = forward(spec, params_1, x_l_1, train_mode=train_mode, rng=rng)
    logits_2 = forward(spec, params_2, x_l_2, train_mode=train_mode, rng=rng)
    total = weights.lambda_sup_1 * esup_loss(logits_1, y_l, epoch)
    total = total + weights.lambda_sup_2 * esup_loss(logits_2, y_l, epoch)
    if weights.lambda_cons_l > 0.0:
        ab_l1 = evidence_from_logits(forward(spec, params_1, x_l_1))
        ab_l2 = evidence_from_logits(forward(spec, params_2, x_l_2))
        total = total + weights.lambda_cons_l * ad.tmean(_consistency_terms(ab_l1, ab_l2))
    if weights.lambda_cons_u > 0.0 and len(x_u_1) > 0:
        ab_u1 = evidence_from_logits(forward(spec, params_1, x_u_1))
        ab_u2 = evidence_from_logits(forward(spec, params_2, x_u_2))
        total = total + weights.lambda_cons_u * ad.tmean(_consistency_terms(ab_u1, ab_u2))
    return total


def default_weights(method: str) -> LossWeights:
    """Published trade-off weights per method; see also config defaults."""
    if method in ("esup", "epsu"):
        return LossWeights(lambda_sup=1.0, lambda_cons=0.0)
    if method == "evat":
        return LossWeights(lambda_cons=1.0)
    if method == "emt":
        return LossWeights(lambda_cons=196.0)
    if method == "enot":
        return LossWeights(lambda_sup_1=0.67, lambda_sup_2=0.67,
                           lambda_cons_l=0.67, lambda_cons_u=1.0)
    raise ValueError(f"unknown method {method!r}")
