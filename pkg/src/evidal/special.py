"""Log-gamma, digamma and trigamma for positive real arguments.

All three follow the same plan: shift the argument above a cutoff with the
recurrence relation, then evaluate an asymptotic (de Moivre / Stirling type)
series at the shifted point.  Log-gamma additionally switches to local Taylor
expansions around its zeros at 1 and 2, where the recurrence route would lose
digits to cancellation.

Functions accept scalars or numpy arrays and always compute in float64.
"""

from __future__ import annotations

import numpy as np

EULER_GAMMA = 0.5772156649015328606
_HALF_LOG_TWO_PI = 0.9189385332046727418
_SHIFT_CUTOFF = 10.0

# B_{2n} / (2n (2n-1)), n = 1..7: coefficients of the log-gamma tail series in 1/x
_LGAMMA_TAIL = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)

# B_{2n} / (2n), n = 1..7: digamma tail series in 1/x^2
_DIGAMMA_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)

# B_{2n}, n = 1..7: trigamma tail series in 1/x^2 (carried factor 1/x applied later)
_TRIGAMMA_TAIL = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)

# zeta(2) .. zeta(41), for the Taylor expansions of log-gamma about 1 and 2
_ZETA = np.array([
    1.6449340668482264365, 1.2020569031595942854, 1.0823232337111381915,
    1.0369277551433699263, 1.0173430619844491397, 1.0083492773819228268,
    1.0040773561979443394, 1.0020083928260822144, 1.0009945751278180853,
    1.0004941886041194646, 1.0002460865533080483, 1.0001227133475784891,
    1.0000612481350587048, 1.0000305882363070205, 1.0000152822594086519,
    1.0000076371976378998, 1.0000038172932649998, 1.0000019082127165539,
    1.0000009539620338728, 1.0000004769329867878, 1.0000002384505027277,
    1.0000001192199259653, 1.0000000596081890513, 1.0000000298035035147,
    1.0000000149015548284, 1.0000000074507117898, 1.0000000037253340248,
    1.0000000018626597235, 1.0000000009313274324, 1.0000000004656629065,
    1.0000000002328311834, 1.0000000001164155017, 1.0000000000582077209,
    1.0000000000291038504, 1.0000000000145519219, 1.0000000000072759598,
    1.0000000000036379795, 1.0000000000018189897, 1.0000000000009094948,
    1.0000000000004547474,
])


class DomainError(ValueError):
    """Raised when an argument leaves the supported domain (x > 0, finite)."""


def _validated(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DomainError(f"{name}: argument must be finite")
    if (arr <= 0.0).any():
        raise DomainError(f"{name}: argument must be positive")
    return arr


def _maybe_scalar(out: np.ndarray, like) -> np.ndarray | float:
    if np.ndim(like) == 0:
        return float(out)
    return out


def _tail_poly(coeffs, inv_sq: np.ndarray) -> np.ndarray:
    # Horner evaluation of sum_n c_n * inv_sq^n (one power of 1/x^2 per term)
    acc = np.zeros_like(inv_sq)
    for c in reversed(coeffs):
        acc = (acc + c) * inv_sq
    return acc


def _lgamma_taylor(t: np.ndarray, about_two: bool) -> np.ndarray:
    # log Gamma(1+t) = -gamma t + sum_{k>=2} (-1)^k zeta(k) t^k / k
    # log Gamma(2+t) = (1-gamma) t + sum_{k>=2} (-1)^k (zeta(k)-1) t^k / k
    acc = np.zeros_like(t)
    tk = t * t
    sign = 1.0
    for k in range(2, 42):
        z = _ZETA[k - 2] - 1.0 if about_two else _ZETA[k - 2]
        acc += sign * z * tk / k
        tk = tk * t
        sign = -sign
    lead = (1.0 - EULER_GAMMA) if about_two else -EULER_GAMMA
    return lead * t + acc


def _lgamma_asymptotic(x: np.ndarray) -> np.ndarray:
    inv_sq = 1.0 / (x * x)
    tail = _tail_poly(_LGAMMA_TAIL, inv_sq) * x
    return (x - 0.5) * np.log(x) - x + _HALF_LOG_TWO_PI + tail


def lgamma(x):
    """Natural log of the gamma function for x > 0."""
    arr = _validated(x, "lgamma")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)

    near_one = np.abs(flat - 1.0) <= 0.3
    near_two = np.abs(flat - 2.0) <= 0.3
    large = (flat >= _SHIFT_CUTOFF) & ~near_one & ~near_two
    rest = ~(near_one | near_two | large)

    if near_one.any():
        out[near_one] = _lgamma_taylor(flat[near_one] - 1.0, about_two=False)
    if near_two.any():
        out[near_two] = _lgamma_taylor(flat[near_two] - 2.0, about_two=True)
    if large.any():
        out[large] = _lgamma_asymptotic(flat[large])
    if rest.any():
        xs = flat[rest]
        xw = xs.copy()
        prod = np.ones_like(xs)
        while True:
            below = xw < _SHIFT_CUTOFF
            if not below.any():
                break
            prod[below] *= xw[below]
            xw[below] += 1.0
        out[rest] = _lgamma_asymptotic(xw) - np.log(prod)
    return _maybe_scalar(out.reshape(arr.shape), x)


def digamma(x):
    """Logarithmic derivative of the gamma function for x > 0."""
    arr = _validated(x, "digamma")
    xw = np.atleast_1d(arr).ravel().copy()
    acc = np.zeros_like(xw)
    while True:
        below = xw < _SHIFT_CUTOFF
        if not below.any():
            break
        acc[below] -= 1.0 / xw[below]
        xw[below] += 1.0
    inv_sq = 1.0 / (xw * xw)
    out = acc + np.log(xw) - 0.5 / xw - _tail_poly(_DIGAMMA_TAIL, inv_sq)
    return _maybe_scalar(out.reshape(arr.shape), x)


def trigamma(x):
    """Derivative of digamma for x > 0."""
    arr = _validated(x, "trigamma")
    xw = np.atleast_1d(arr).ravel().copy()
    acc = np.zeros_like(xw)
    while True:
        below = xw < _SHIFT_CUTOFF
        if not below.any():
            break
        acc[below] += 1.0 / (xw[below] * xw[below])
        xw[below] += 1.0
    inv_sq = 1.0 / (xw * xw)
    out = acc + 1.0 / xw + 0.5 * inv_sq + _tail_poly(_TRIGAMMA_TAIL, inv_sq) / xw
    return _maybe_scalar(out.reshape(arr.shape), x)
