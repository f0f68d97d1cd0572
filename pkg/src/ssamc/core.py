"""Stochastic-approximation state: gain schedule, weight update and estimators.

The log-weight vector ``theta`` tracks ``log(omega_i / pi_i)`` up to an
additive constant.  Everything here is plain numpy; the hot loops in
:mod:`ssamc.sampler` re-implement ``update_theta``/``recenter`` inline with the
same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THETA_BOUND = 1e100


class ContractError(ValueError):
    """Raised when an operation is called with inputs violating its contract."""


class UnstartedRunError(RuntimeError):
    """Raised when probabilities are requested before any region was visited."""


@dataclass(frozen=True)
class GainSchedule:
    """Gain factor ``gamma_t = t0 / max(t0, t)``.

    This family is positive, nonincreasing, tends to zero and has a
    divergent sum with a convergent sum of any power above one, which is
    all the stochastic approximation needs.
    """

    t0: float

    def __post_init__(self):
        if not self.t0 > 0:
            raise ContractError(f"t0 must be positive, got {self.t0}")

    def __call__(self, t: int) -> float:
        return gain(self, t)


def gain(schedule: GainSchedule, t: int) -> float:
    if t < 1:
        raise ContractError(f"iteration index must be >= 1, got {t}")
    return schedule.t0 / max(schedule.t0, t)


def uniform_pi(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


def check_pi(pi) -> np.ndarray:
    """Validate a desired-sampling-proportion vector and return it as an array."""
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or pi.size == 0:
        raise ContractError("pi must be a non-empty vector")
    if np.any(pi <= 0):
        raise ContractError("every pi_i must be positive")
    if abs(pi.sum() - 1.0) > 1e-9:
        raise ContractError(f"pi must sum to 1, sums to {pi.sum()!r}")
    return pi


def update_theta(theta, gamma: float, p_hat, pi) -> np.ndarray:
    """One stochastic-approximation step ``theta + gamma * (p_hat - pi)``.

    With ``p_hat`` an indicator vector this is the single-sample update; with
    ``p_hat = e / kappa`` it is the multi-sample update, and with a smoothed
    frequency vector it is the smoothing update.  If the result leaves
    ``[-1e100, 1e100]^m`` it is shifted back by its mean.
    """
    theta = np.asarray(theta, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if not (theta.shape == p_hat.shape == pi.shape) or theta.ndim != 1:
        raise ContractError(
            f"dimension mismatch: theta {theta.shape}, p_hat {p_hat.shape}, pi {pi.shape}"
        )
    new = theta + gamma * (p_hat - pi)
    if np.any(np.abs(new) > THETA_BOUND):
        new = new - new.mean()
    return new


def recenter(theta) -> np.ndarray:
    """Zero-mean representative of ``theta``; the trial density ignores shifts."""
    theta = np.asarray(theta, dtype=float)
    return theta - theta.mean()


def estimate_probabilities(theta, pi, visits) -> np.ndarray:
    """Invert ``theta`` into region probabilities.

    Regions never visited are treated as empty: their ``pi`` mass is spread
    evenly over the visited ones (``nu``) and they are reported as exactly 0.

    Parameters
    ----------
    theta : array_like, shape (m,)
    pi : array_like, shape (m,)
    visits : array_like, shape (m,)
        Visit counts (or a boolean visited mask).

    Returns
    -------
    numpy.ndarray
        Probability vector summing to one.
    """
    theta = np.asarray(theta, dtype=float)
    pi = np.asarray(pi, dtype=float)
    visited = np.asarray(visits) > 0
    if theta.shape != pi.shape or visited.shape != theta.shape:
        raise ContractError("theta, pi and visits must share one length")
    n_visited = int(visited.sum())
    if n_visited == 0:
        raise UnstartedRunError("no region has been visited yet")
    nu = pi[~visited].sum() / n_visited
    logw = np.full(theta.shape, -np.inf)
    logw[visited] = theta[visited] + np.log(pi[visited] + nu)
    logw -= logw[visited].max()
    w = np.exp(logw)
    return w / w.sum()


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max()
    w = np.exp(a)
    return w / w.sum()


def _occupation(omega, theta) -> np.ndarray:
    # S_i / S with S_i = omega_i * exp(-theta_i)
    omega = np.asarray(omega, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(omega <= 0):
        raise ContractError("omega must be strictly positive")
    return _softmax(np.log(omega) - theta)


def mean_field_h(omega, theta, pi) -> np.ndarray:
    """Mean field of the update at fixed ``theta``: ``S_i/S - pi_i``."""
    return _occupation(omega, theta) - np.asarray(pi, dtype=float)


@dataclass(frozen=True)
class LyapunovCheck:
    v: float
    grad_v: np.ndarray
    v_dot: float
    h: np.ndarray


def lyapunov_check(omega, theta, pi) -> LyapunovCheck:
    """Evaluate ``v = 0.5 * sum(h^2)``, its closed-form gradient and ``v_dot``.

    ``v_dot`` is returned in its variance form, ``-sum q (h - mu)^2`` with
    ``q = S/S.sum()`` and ``mu = sum q h``, so it is never positive.
    """
    q = _occupation(omega, theta)
    h = q - np.asarray(pi, dtype=float)
    mu = float(np.dot(h, q))
    grad = mu * q - h * q
    variance = float(np.dot(q, (h - mu) ** 2))
    return LyapunovCheck(v=0.5 * float(np.dot(h, h)), grad_v=grad, v_dot=-variance, h=h)


@dataclass(frozen=True)
class EnergyGrid:
    """Partition by ``lambda(x)`` on cut points ``u_1 < ... < u_{m-1}``.

    Region 1 is ``lambda < u_1``, region ``i`` is ``u_{i-1} <= lambda < u_i``
    and region ``m`` is ``lambda >= u_{m-1}``.
    """

    cuts: tuple
    capital_lambda: float

    def __post_init__(self):
        c = np.asarray(self.cuts, dtype=float)
        if c.ndim != 1 or c.size == 0 or np.any(np.diff(c) <= 0):
            raise ContractError("cut points must be a strictly increasing, non-empty sequence")
        if not self.capital_lambda > 0:
            raise ContractError("capital_lambda must be positive")

    @classmethod
    def uniform(cls, first: float, width: float, m: int, capital_lambda: float) -> "EnergyGrid":
        return cls(tuple(first + width * np.arange(m - 1)), capital_lambda)

    @property
    def m(self) -> int:
        return len(self.cuts) + 1

    def region_index(self, lam: float) -> int:
        return int(np.searchsorted(np.asarray(self.cuts), lam, side="right")) + 1


@dataclass(frozen=True)
class IndexRange:
    """Partition of a model space by model index ``k_min..k_max``."""

    k_min: int
    k_max: int

    def __post_init__(self):
        if not 0 <= self.k_min <= self.k_max:
            raise ContractError("need 0 <= k_min <= k_max")

    @property
    def m(self) -> int:
        return self.k_max - self.k_min + 1

    @property
    def capital_lambda(self) -> float:
        return float(self.m)

    def region_index(self, k: int) -> int:
        if not self.k_min <= k <= self.k_max:
            raise ContractError(f"k={k} outside [{self.k_min}, {self.k_max}]")
        return k - self.k_min + 1
