"""Numeric primitives shared by every estimation step.

Logistic link (scalar and vectorised), the standard normal CDF and
quantile, the chi-square(1) quantile and the counter-based random
stream used by the Monte Carlo harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
_SATURATION = 35.0


@dataclass(frozen=True)
class LinkEval:
    value: float
    derivative: float


def logistic_link(t: float) -> LinkEval:
    """Evaluate G(t) = exp(t) / (1 + exp(t)) and G'(t) without overflow."""
    t = float(t)
    if not math.isfinite(t):
        raise ValueError(f"logistic_link requires a finite argument, got {t}")
    if t < -_SATURATION:
        value = math.exp(t)
    elif t > _SATURATION:
        value = 1.0 - math.exp(-t)
    elif t >= 0:
        value = 1.0 / (1.0 + math.exp(-t))
    else:
        e = math.exp(t)
        value = e / (1.0 + e)
    # exp(-|t|) / (1 + exp(-|t|))^2 keeps the derivative positive past
    # the point where value * (1 - value) rounds to zero.
    e = math.exp(-abs(t))
    derivative = min(e / (1.0 + e) ** 2, 0.25)  # rounding can overshoot by an ulp
    return LinkEval(value, derivative)


def expit(t: np.ndarray) -> np.ndarray:
    """Vectorised logistic link, same branches as :func:`logistic_link`."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def expit_deriv(t: np.ndarray) -> np.ndarray:
    """Vectorised G'(t) = G(t) (1 - G(t))."""
    e = np.exp(-np.abs(np.asarray(t, dtype=float)))
    return np.minimum(e / (1.0 + e) ** 2, 0.25)


def log1pexp(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)) evaluated stably."""
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


# Acklam's rational approximation, relative error about 1.15e-9 before
# refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam_lower(p: float) -> float:
    # p <= 0.5
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def normal_quantile(p: float) -> float:
    """Standard normal quantile Phi^{-1}(p).

    Acklam's approximation followed by one Halley step against the
    erfc-based CDF. The upper half is obtained by reflection so the
    refinement always runs in the accurate (lower) tail.
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"normal_quantile requires p in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    x = _acklam_lower(p)
    e = normal_cdf(x) - p
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def chi2_1_quantile(p: float) -> float:
    """(p)-quantile of the chi-square distribution with one degree of freedom."""
    p = float(p)
    if not (0.0 <= p < 1.0):
        raise ValueError(f"chi2_1_quantile requires p in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    return normal_quantile(0.5 * (1.0 + p)) ** 2


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Philox is keyed directly with the two 64-bit words, so every
    replication owns a disjoint, reproducible stream irrespective of
    which worker draws it.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream_id % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
