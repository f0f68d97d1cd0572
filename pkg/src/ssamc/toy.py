"""Finite toy targets whose region weights can be summed exactly.

States are ``0..S-1`` split into ``m`` contiguous blocks of ``width`` states;
the proposal is, with probability 1/2 each, a +-1 random walk step (moves
off the ends are rejected) or a uniform jump to any state, so it is
symmetric.  The partition function ``lambda(x)`` is the 1-based region
number, so ``Lambda = m``.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .sampler import CompiledKernel


@njit(cache=True)
def _propose(x, y, params, rng):
    n_states = params[0].shape[0]
    local = rng.random() < 0.5
    u = rng.random()
    if local:
        v = x[0] + (1 if u < 0.5 else -1)
        if v < 0 or v >= n_states:
            return False, 0.0
    else:
        v = min(int(u * n_states), n_states - 1)
    y[0] = v
    return True, 0.0


@njit(cache=True)
def _evaluate(x, params):
    log_psi, width = params
    j = x[0] // width
    return log_psi[x[0]], j, float(j + 1)


class DiscreteToy:
    """Target on ``m * width`` integer states with given ``log psi`` values."""

    def __init__(self, log_psi, m: int):
        log_psi = np.asarray(log_psi, dtype=np.float64)
        if log_psi.ndim != 1 or log_psi.size % m:
            raise ValueError("number of states must be a multiple of m")
        if not np.all(np.isfinite(log_psi)):
            raise ValueError("log_psi must be finite")
        self.log_psi_table = log_psi
        self.m = m
        self.width = log_psi.size // m
        self.capital_lambda = float(m)

    @property
    def n_states(self) -> int:
        return self.log_psi_table.size

    def log_psi(self, x) -> float:
        return float(self.log_psi_table[x])

    def region_index(self, x) -> int:
        return int(x) // self.width + 1

    def lambda_value(self, x) -> float:
        return float(self.region_index(x))

    def propose(self, x, rng):
        local = rng.random() < 0.5
        u = rng.random()
        if not local:
            return min(int(u * self.n_states), self.n_states - 1), 0.0
        v = int(x) + (1 if u < 0.5 else -1)
        if v < 0 or v >= self.n_states:
            return None
        return v, 0.0

    def initial_state(self, rng) -> int:
        return min(int(rng.random() * self.n_states), self.n_states - 1)

    def kernel(self) -> CompiledKernel:
        return CompiledKernel(
            propose=_propose,
            evaluate=_evaluate,
            params=(self.log_psi_table, np.int64(self.width)),
            pack=lambda x: np.array([x], dtype=np.int64),
            unpack=lambda a: int(a[0]),
        )

    # exact quantities, by direct summation over the state space

    def log_omega(self) -> np.ndarray:
        return logsumexp(self.log_psi_table.reshape(self.m, self.width), axis=1)

    def region_probs(self) -> np.ndarray:
        w = np.exp(self.log_omega() - self.log_omega().max())
        return w / w.sum()

    def theta_target(self, pi=None) -> np.ndarray:
        """Zero-mean ``log(omega_i / pi_i)``, the fixed point of the update."""
        pi = np.full(self.m, 1.0 / self.m) if pi is None else np.asarray(pi, dtype=float)
        t = self.log_omega() - np.log(pi)
        return t - t.mean()


def smooth_toy(m: int = 10, width: int = 5) -> DiscreteToy:
    """Ten-region default whose region weights vary smoothly over ~4 nats."""
    x = np.arange(m * width, dtype=float)
    return DiscreteToy(2.0 * np.sin(x / 9.0) - 0.03 * x, m)


def two_region_toy(probs=(0.5, 0.5), width: int = 4) -> DiscreteToy:
    """Two regions of ``width`` equal-mass states carrying ``probs``."""
    p = np.asarray(probs, dtype=float)
    log_psi = np.repeat(np.log(p / width), width)
    return DiscreteToy(log_psi, 2)
