"""Beta-evidence head: parameter mapping, uncertainty and regularizer terms.

Each binary class head outputs a logit pair; bounded exponentiation turns the
pair into Beta parameters (alpha, beta) = exp(clamped logits) + 1, carried on
the last axis as [positive, negative].  Functions here accept either numpy
arrays or autodiff tensors and preserve the kind they were given, so the same
formula backs both the differentiable losses and the plain scoring paths.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import special

LOGIT_CLAMP_LO = -10.0
LOGIT_CLAMP_HI = 10.0
LN_TWO = math.log(2.0)

AGGREGATION_MODES = ("mean", "sum", "max")


class _NumpyKernels:
    @staticmethod
    def clamp(x, lo, hi):
        return np.clip(x, lo, hi)

    @staticmethod
    def exp(x):
        return np.exp(x)

    @staticmethod
    def lgamma(x):
        return np.asarray(special.lgamma(x))

    @staticmethod
    def digamma(x):
        return np.asarray(special.digamma(x))

    @staticmethod
    def sum_last(x, keepdims=False):
        return x.sum(axis=-1, keepdims=keepdims)


class _TensorKernels:
    @staticmethod
    def clamp(x, lo, hi):
        return ad.clamp_st(x, lo, hi)

    @staticmethod
    def exp(x):
        return ad.exp(x)

    @staticmethod
    def lgamma(x):
        return ad.lgamma(x)

    @staticmethod
    def digamma(x):
        return ad.digamma(x)

    @staticmethod
    def sum_last(x, keepdims=False):
        return ad.tsum(x, axis=-1, keepdims=keepdims)


def _kernels(x):
    return _TensorKernels if isinstance(x, ad.Tensor) else _NumpyKernels


def evidence_from_logits(logits, lo: float = LOGIT_CLAMP_LO, hi: float = LOGIT_CLAMP_HI):
    """Map raw logit pairs (..., 2) to Beta parameters: exp(clamp(z)) + 1.

    The clamp bounds evidence to [1 + e^lo, 1 + e^hi] so downstream gamma
    calls never see extreme arguments; its gradient is zero where saturated.
    """
    if not isinstance(logits, ad.Tensor) and not np.isfinite(logits).all():
        raise ValueError("evidence_from_logits: logits must be finite")
    k = _kernels(logits)
    return k.exp(k.clamp(logits, lo, hi)) + 1.0


def predictive_mean(ab):
    """Expected probability pair (..., 2): each parameter over their sum."""
    k = _kernels(ab)
    return ab / k.sum_last(ab, keepdims=True)


def aleatoric_uncertainty(ab):
    """Expected entropy of the outcome under Beta(alpha, beta), in bits.

    (1/ln 2) * sum_gamma (gamma/E) * (psi(E + 1) - psi(gamma + 1)) with
    E = alpha + beta; equals 1/(2 ln 2) at the uniform prior and tends to the
    binary entropy of the mean as E grows.
    """
    k = _kernels(ab)
    total = k.sum_last(ab, keepdims=True)
    contrib = (ab / total) * (k.digamma(total + 1.0) - k.digamma(ab + 1.0))
    return k.sum_last(contrib) * (1.0 / LN_TWO)


def adjust_params(ab, y):
    """Replace the true-class parameter with 1, keeping the other.

    ``y`` holds binary labels, one per head (shape = ab.shape without the
    trailing pair axis).  With the pair t = [y, 1 - y] this is
    t + (1 - t) * ab, the argument of the uniform-prior divergence term.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("adjust_params: labels must be 0 or 1")
    pair = np.stack([y, 1.0 - y], axis=-1)
    return pair + (1.0 - pair) * ab


def kl_to_uniform(ab):
    """KL(Beta(alpha, beta) || Beta(1, 1)) per head pair, in nats.

    lgamma(S) - lgamma(alpha) - lgamma(beta)
      + sum_gamma (gamma - 1) * (psi(gamma) - psi(S)),  S = alpha + beta.
    Zero exactly at (1, 1).
    """
    k = _kernels(ab)
    total = k.sum_last(ab, keepdims=True)
    direct = k.lgamma(total) - k.sum_last(k.lgamma(ab), keepdims=True)
    tilt = k.sum_last((ab - 1.0) * (k.digamma(ab) - k.digamma(total)), keepdims=True)
    return k.sum_last(direct + tilt)


def image_uncertainty(per_class_au, mode: str = "mean") -> np.ndarray:
    """Aggregate per-class uncertainties (..., K) to one score per sample."""
    if mode not in AGGREGATION_MODES:
        raise ValueError(
            f"image_uncertainty: mode must be one of {AGGREGATION_MODES}, got {mode!r}")
    arr = np.asarray(per_class_au, dtype=np.float64)
    if arr.size == 0 or arr.shape[-1] == 0:
        raise ValueError("image_uncertainty: empty per-class sequence")
    if mode == "mean":
        return arr.mean(axis=-1)
    if mode == "sum":
        return arr.sum(axis=-1)
    return arr.max(axis=-1)
