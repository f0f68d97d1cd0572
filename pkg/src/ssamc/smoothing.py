"""Nadaraya-Watson smoothing of sparse per-iteration frequency vectors.

The smoother works on the region index axis ``1..m``.  Kernel arguments are
``Lambda * (i - j) / (m * h)`` where ``Lambda`` is the rough range of the
partition function ``lambda(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

DEFAULT_SUPPORT = 3.0


@dataclass(frozen=True)
class KernelSpec:
    """Double-truncated Gaussian kernel with support ``(-support_c, support_c)``."""

    support_c: float = DEFAULT_SUPPORT

    def __post_init__(self):
        if not self.support_c > 0:
            raise ValueError("support_c must be positive")


@njit(cache=True)
def _kernel(z, c):
    if abs(z) < c:
        return math.exp(-0.5 * z * z)
    return 0.0


def kernel_weight(z: float, spec: KernelSpec = KernelSpec()) -> float:
    return _kernel(float(z), float(spec.support_c))


@njit(cache=True)
def _bandwidth(gamma, lam, kappa):
    lo = lam[0]
    hi = lam[0]
    for v in lam:
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    default = (hi - lo) / (2.0 * (1.0 + math.log2(kappa)))
    return min(math.sqrt(gamma), default)


def bandwidth(gamma_t: float, lambda_values, kappa: int) -> float:
    """``min(sqrt(gamma_t), range(lambda_values) / (2 (1 + log2 kappa)))``."""
    lam = np.asarray(lambda_values, dtype=np.float64)
    if kappa < 1 or lam.size == 0:
        raise ValueError("kappa must be >= 1 and lambda_values non-empty")
    return _bandwidth(float(gamma_t), lam, int(kappa))


@njit(cache=True)
def _smooth(counts, kappa, capital_lambda, h, c, out):
    # counts: int64[m]; writes p_hat into out
    m = counts.shape[0]
    if h <= 0.0:
        for i in range(m):
            out[i] = counts[i] / kappa
        return
    scale = capital_lambda / (m * h)
    # weights by |i - j|; beyond `reach` the kernel is exactly zero
    # (d = 0 is set directly: a tiny h makes scale infinite and inf * 0 is nan)
    w = np.zeros(m)
    w[0] = 1.0
    reach = 0
    for d in range(1, m):
        wd = _kernel(scale * d, c)
        if wd == 0.0:
            break
        w[d] = wd
        reach = d
    for i in range(m):
        lo = max(0, i - reach)
        hi = min(m - 1, i + reach)
        num = 0.0
        den = 0.0
        for j in range(lo, hi + 1):
            wd = w[abs(i - j)]
            num += wd * (counts[j] / kappa)
            den += wd
        out[i] = num / den


def smooth_frequencies(counts, m: int, capital_lambda: float, h_t: float,
                       spec: KernelSpec = KernelSpec()) -> np.ndarray:
    """Smoothed estimate of the region occupation probabilities.

    ``counts`` are the region counts of one iteration's ``kappa`` samples;
    ``kappa`` is taken as ``counts.sum()``.  With ``h_t == 0`` this returns
    ``counts / kappa`` exactly.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (m,):
        raise ValueError(f"expected {m} counts, got shape {counts.shape}")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    kappa = int(counts.sum())
    if kappa < 1:
        raise ValueError("counts must sum to kappa >= 1")
    out = np.empty(m)
    _smooth(counts, float(kappa), float(capital_lambda), float(h_t), float(spec.support_c), out)
    return out
