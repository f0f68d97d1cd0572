"""Three-component bivariate Gaussian mixture with an energy partition.

The sample space is cut into 45 regions by the energy ``lambda(x) = -log f(x)``
on a 0.5-wide grid (``lambda < 0.5``, ``[0.5, 1.0)``, ..., ``lambda >= 22``).
Region probabilities ``P(E_i)`` are what the samplers estimate; a stratified
Monte Carlo oracle provides the reference values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import EnergyGrid
from .sampler import CompiledKernel, draw_index

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MixtureTarget:
    """Equal-weight mixture of bivariate normals."""

    means: np.ndarray = field(default_factory=lambda: np.array(
        [[-8.0, -8.0], [6.0, 6.0], [0.0, 0.0]]))
    covs: np.ndarray = field(default_factory=lambda: np.array(
        [[[1.0, 0.9], [0.9, 1.0]], [[1.0, -0.9], [-0.9, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]))

    def __post_init__(self):
        for c in self.covs:
            if not np.allclose(c, c.T) or np.any(np.linalg.eigvalsh(c) <= 0):
                raise ValueError("covariances must be symmetric positive definite")

    @property
    def n_components(self) -> int:
        return len(self.means)

    @property
    def inv_covs(self) -> np.ndarray:
        return np.linalg.inv(self.covs)

    @property
    def log_dets(self) -> np.ndarray:
        return np.linalg.slogdet(self.covs)[1]

    @property
    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.covs)

    def params(self) -> tuple:
        return (np.ascontiguousarray(self.means, dtype=np.float64),
                np.ascontiguousarray(self.inv_covs, dtype=np.float64),
                np.ascontiguousarray(self.log_dets, dtype=np.float64))


PAPER_MIXTURE = MixtureTarget()
PAPER_PARTITION = EnergyGrid.uniform(0.5, 0.5, 45, capital_lambda=22.0)


@njit(cache=True)
def _log_f(x0, x1, means, inv_covs, log_dets):
    k = means.shape[0]
    terms = np.empty(k)
    top = -np.inf
    for c in range(k):
        d0 = x0 - means[c, 0]
        d1 = x1 - means[c, 1]
        q = (inv_covs[c, 0, 0] * d0 * d0 + 2.0 * inv_covs[c, 0, 1] * d0 * d1
             + inv_covs[c, 1, 1] * d1 * d1)
        terms[c] = -LOG_2PI - 0.5 * log_dets[c] - 0.5 * q
        if terms[c] > top:
            top = terms[c]
    s = 0.0
    for c in range(k):
        s += math.exp(terms[c] - top)
    return top + math.log(s) - math.log(k)


@njit(cache=True)
def _propose(x, y, params, rng):
    y[0] = x[0] + rng.standard_normal()
    y[1] = x[1] + rng.standard_normal()
    return True, 0.0


@njit(cache=True)
def _evaluate(x, params):
    means, inv_covs, log_dets, cuts = params
    lp = _log_f(x[0], x[1], means, inv_covs, log_dets)
    lam = -lp
    return lp, np.searchsorted(cuts, lam, side="right"), lam


@njit(cache=True)
def _bin_energies(xs, means, inv_covs, log_dets, cuts, counts):
    for r in range(xs.shape[0]):
        lam = -_log_f(xs[r, 0], xs[r, 1], means, inv_covs, log_dets)
        counts[np.searchsorted(cuts, lam, side="right")] += 1


class MixtureModel:
    """:class:`~ssamc.sampler.TargetModel` for the mixture with ``psi = f``.

    Proposals are ``N(x, step^2 I)`` random-walk moves (``step = 1`` by
    default); the chain starts from a standard normal draw.
    """

    def __init__(self, target: MixtureTarget = PAPER_MIXTURE,
                 partition: EnergyGrid = PAPER_PARTITION):
        self.target = target
        self.partition = partition
        self.m = partition.m
        self.capital_lambda = partition.capital_lambda
        self._params = target.params()
        self._cuts = np.asarray(partition.cuts, dtype=np.float64)

    def log_psi(self, x) -> float:
        return float(_log_f(float(x[0]), float(x[1]), *self._params))

    def lambda_value(self, x) -> float:
        return -self.log_psi(x)

    def region_index(self, x) -> int:
        return self.partition.region_index(self.lambda_value(x))

    def propose(self, x, rng):
        return np.array([x[0] + rng.standard_normal(), x[1] + rng.standard_normal()]), 0.0

    def initial_state(self, rng) -> np.ndarray:
        return np.array([rng.standard_normal(), rng.standard_normal()])

    def kernel(self) -> CompiledKernel:
        return CompiledKernel(
            propose=_propose,
            evaluate=_evaluate,
            params=self._params + (self._cuts,),
            pack=lambda x: np.array(x, dtype=np.float64),
            unpack=lambda a: a.copy(),
        )


def log_density(x, target: MixtureTarget = PAPER_MIXTURE) -> float:
    """``log f(x)`` via log-sum-exp over the components."""
    return float(_log_f(float(x[0]), float(x[1]), *target.params()))


def region_index(x, target: MixtureTarget = PAPER_MIXTURE,
                 partition: EnergyGrid = PAPER_PARTITION) -> int:
    """1-based region of ``x``, always computed from ``-log_density(x)``."""
    return partition.region_index(-log_density(x, target))


def sample_mixture(rng, target: MixtureTarget = PAPER_MIXTURE) -> np.ndarray:
    c = draw_index(rng, target.n_components)
    z = np.array([rng.standard_normal(), rng.standard_normal()])
    return target.means[c] + target.cholesky[c] @ z


def true_region_probs(n_samples: int, rng, target: MixtureTarget = PAPER_MIXTURE,
                      partition: EnergyGrid = PAPER_PARTITION,
                      chunk: int = 1_000_000) -> np.ndarray:
    """Stratified Monte Carlo estimate of ``P(E_i)``.

    Draws ``n_samples // n_components`` points from each component, bins
    them by energy and averages the per-component frequencies with the
    (equal) mixture weights.
    """
    k = target.n_components
    per = n_samples // k
    if per < 1:
        raise ValueError("need at least one sample per component")
    means, inv_covs, log_dets = target.params()
    cuts = np.asarray(partition.cuts, dtype=np.float64)
    chol = target.cholesky
    probs = np.zeros(partition.m)
    for c in range(k):
        counts = np.zeros(partition.m, dtype=np.int64)
        left = per
        while left:
            n = min(chunk, left)
            xs = target.means[c] + rng.standard_normal((n, 2)) @ chol[c].T
            _bin_energies(np.ascontiguousarray(xs), means, inv_covs, log_dets, cuts, counts)
            left -= n
        probs += counts / per
    return probs / k


def rmse(estimates, truth) -> np.ndarray:
    """Per-region root mean squared error of a stack of run estimates."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float)
    if est.shape[1] != truth.shape[0]:
        raise ValueError("estimate and truth lengths differ")
    return np.sqrt(np.mean((est - truth) ** 2, axis=0))
