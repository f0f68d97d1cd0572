"""Bayesian change-point model selection.

A configuration is a sorted tuple of change positions ``c_1 < ... < c_k`` in
``1..n-1``; block ``i`` holds observations ``c_{i-1}+1 .. c_i`` (with
``c_0 = 0`` and ``c_{k+1} = n``).  Each block is normal with its own mean
(flat prior) and variance (inverse-gamma prior); both are integrated out, so
the posterior over configurations is available in closed form up to a
constant.  The model size ``k`` carries a truncated Poisson prior.

The sampler moves are birth, death and simultaneous (move one change
point), with the model-index partition ``k_min..k_max``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .core import ContractError, IndexRange
from .sampler import CompiledKernel, draw_index, make_rng

LOG_2PI = math.log(2.0 * math.pi)

TRUE_CHANGE_POINTS = (120, 210, 460, 530, 615, 710, 800, 950)
# (mean, spread) of the nine generating segments; see generate_dataset
SEGMENT_PARAMS = ((-0.5, 1.0), (0.5, 0.5), (0.0, 1.5), (-1.0, 1.0), (0.5, 2.0),
                  (1.0, 1.0), (0.0, 1.0), (0.5, 0.5), (1.0, 1.0))
N_OBS = 1000
DEFAULT_DATASET_SEED = 1


@dataclass(frozen=True)
class Hyper:
    alpha: float = 0.05
    beta: float = 0.05
    lambda_prior: float = 1.0
    k_min: int = 7
    k_max: int = 14

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lambda_prior) <= 0:
            raise ContractError("alpha, beta and lambda_prior must be positive")
        IndexRange(self.k_min, self.k_max)

    @property
    def partition(self) -> IndexRange:
        return IndexRange(self.k_min, self.k_max)


@dataclass(frozen=True)
class ChangePointModel:
    positions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise ContractError(f"positions must be strictly increasing: {self.positions}")

    @property
    def k(self) -> int:
        return len(self.positions)

    def check(self, n: int) -> None:
        if self.positions and (self.positions[0] < 1 or self.positions[-1] > n - 1):
            raise ContractError(f"positions must lie in 1..{n - 1}")

    def bounds(self, n: int) -> tuple:
        """``(c_0, c_1, ..., c_k, c_{k+1}) = (0, ..., n)``."""
        return (0,) + self.positions + (n,)


class Dataset:
    """Observations with prefix sums of ``z`` and ``z**2`` (index 0 is empty)."""

    def __init__(self, z, seed: Optional[int] = None):
        self.z = np.asarray(z, dtype=np.float64)
        if self.z.ndim != 1 or self.z.size < 2:
            raise ContractError("need a 1-d sequence of at least two observations")
        self.seed = seed
        self.s1 = np.concatenate(([0.0], np.cumsum(self.z)))
        self.s2 = np.concatenate(([0.0], np.cumsum(self.z ** 2)))

    @property
    def n(self) -> int:
        return self.z.size

    def check_prefix_sums(self) -> bool:
        return (np.allclose(self.s1[1:], np.cumsum(self.z))
                and np.allclose(self.s2[1:], np.cumsum(self.z ** 2)))

    def save(self, path) -> None:
        head = f"# n={self.n} seed={'' if self.seed is None else self.seed}\n"
        Path(path).write_text(head + "".join(f"{v!r}\n" for v in self.z.tolist()))

    @classmethod
    def load(cls, path) -> "Dataset":
        seed = None
        values = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "seed" and val:
                        seed = int(val)
                continue
            values.append(float(line))
        return cls(values, seed=seed)


def generate_dataset(seed: int, spread: str = "sd") -> Dataset:
    """Simulate the nine-segment, 1000-observation series.

    ``spread`` says how the second number of each segment pair is read:
    ``"sd"`` (default) as a standard deviation, ``"variance"`` as a variance.
    Under the default the exact posterior over ``k`` concentrates on 8 and 9
    change points for most seeds; under ``"variance"`` the weak contrast at
    position 615 leaves roughly half the mass on ``k = 7``.
    """
    if spread not in ("sd", "variance"):
        raise ContractError(f"spread must be 'sd' or 'variance', got {spread!r}")
    rng = make_rng(seed, 0)
    bounds = (0,) + TRUE_CHANGE_POINTS + (N_OBS,)
    z = np.empty(N_OBS)
    noise = rng.standard_normal(N_OBS)
    for (lo, hi), (mu, v) in zip(zip(bounds, bounds[1:]), SEGMENT_PARAMS):
        z[lo:hi] = mu + (v if spread == "sd" else math.sqrt(v)) * noise[lo:hi]
    return Dataset(z, seed=seed)


# ---------------------------------------------------------------------------
# marginal posterior


@njit(cache=True)
def _bracket(length, s1, s2, beta):
    # beta + half the within-block sum of squares; prefix-sum differences can
    # round the sum of squares slightly below zero, so it is clipped there
    return beta + max(0.0, 0.5 * s2 - s1 * s1 / (2.0 * length))


@njit(cache=True)
def _block(length, s1, s2, alpha, beta):
    a = 0.5 * (length - 1) + alpha
    b = _bracket(length, s1, s2, beta)
    return -(0.5 * math.log(length) - math.lgamma(a) + a * math.log(b))


@njit(cache=True)
def _log_post(c, k, S1, S2, alpha, beta, log_lam):
    # c holds c_0 .. c_{k+1}
    n = c[k + 1]
    a_k = ((k + 1) * (alpha * math.log(beta) - math.lgamma(alpha))
           + math.lgamma(n - k) + k * log_lam)
    total = a_k + 0.5 * (k + 1) * LOG_2PI
    for i in range(1, k + 2):
        lo = c[i - 1]
        hi = c[i]
        total += _block(hi - lo, S1[hi] - S1[lo], S2[hi] - S2[lo], alpha, beta)
    return total


def log_marginal_posterior(model: ChangePointModel, data: Dataset, hyper: Hyper) -> float:
    """Log posterior of a configuration with block means and variances integrated out."""
    model.check(data.n)
    c = np.array(model.bounds(data.n), dtype=np.int64)
    return float(_log_post(c, model.k, data.s1, data.s2, hyper.alpha, hyper.beta,
                           math.log(hyper.lambda_prior)))


def log_joint_full(model: ChangePointModel, params, data: Dataset, hyper: Hyper) -> float:
    """Log likelihood plus log prior with explicit block ``(mean, variance)`` pairs.

    The inverse-gamma variance prior enters as
    ``-(alpha + 1) log sigma^2 - beta / sigma^2``, whose integral against the
    likelihood reproduces :func:`log_marginal_posterior` exactly.
    """
    model.check(data.n)
    params = np.asarray(params, dtype=float).reshape(-1, 2)
    if params.shape[0] != model.k + 1:
        raise ContractError(f"need {model.k + 1} (mean, variance) pairs")
    if np.any(params[:, 1] <= 0):
        raise ContractError("block variances must be positive")
    k = model.k
    a_k = ((k + 1) * (hyper.alpha * math.log(hyper.beta) - math.lgamma(hyper.alpha))
           + math.lgamma(data.n - k) + k * math.log(hyper.lambda_prior))
    total = a_k
    c = model.bounds(data.n)
    for (lo, hi), (mu, var) in zip(zip(c, c[1:]), params):
        resid = data.z[lo:hi] - mu
        total -= 0.5 * (hi - lo) * math.log(var) + float(resid @ resid) / (2.0 * var)
        total -= (hyper.alpha + 1.0) * math.log(var) + hyper.beta / var
    return total


# ---------------------------------------------------------------------------
# moves


class MoveKind(enum.Enum):
    BIRTH = "birth"
    DEATH = "death"
    SIMULTANEOUS = "simultaneous"


@dataclass(frozen=True)
class MoveMeta:
    """Which change point the move touched and the width of its interval.

    ``width`` is ``c_{u+1} - c_u - 1`` for a birth, ``c_{u+1} - c_{u-1} - 1``
    for a death and the candidate count ``c_{u+1} - c_{u-1} - 2`` for a
    simultaneous move.
    """

    u: int
    width: int


@njit(cache=True)
def _log_q(k, j, k_min, k_max):
    # log probability of choosing to move from size k to size j
    if j == k:
        return math.log(1.0 / 3.0)
    if k_min == k_max:
        return -math.inf
    if (k == k_min and j == k + 1) or (k == k_max and j == k - 1):
        return math.log(2.0 / 3.0)
    if k_min < k < k_max and abs(j - k) == 1:
        return math.log(1.0 / 3.0)
    return -math.inf


def move_probability(k: int, j: int, hyper: Hyper) -> float:
    return math.exp(_log_q(k, j, hyper.k_min, hyper.k_max))


def _kind_from_uniform(u: float, k: int, k_min: int, k_max: int) -> int:
    # 0 birth, 1 death, 2 simultaneous
    if k_min == k_max:
        return 2
    if k == k_min:
        return 0 if u < 2.0 / 3.0 else 2
    if k == k_max:
        return 1 if u < 2.0 / 3.0 else 2
    if u < 1.0 / 3.0:
        return 0
    if u < 2.0 / 3.0:
        return 1
    return 2


_choose_kind = njit(cache=True)(_kind_from_uniform)
_KINDS = (MoveKind.BIRTH, MoveKind.DEATH, MoveKind.SIMULTANEOUS)


def choose_move(k: int, hyper: Hyper, rng) -> MoveKind:
    if not hyper.k_min <= k <= hyper.k_max:
        raise ContractError(f"k={k} outside [{hyper.k_min}, {hyper.k_max}]")
    return _KINDS[_kind_from_uniform(rng.random(), k, hyper.k_min, hyper.k_max)]


def propose(model: ChangePointModel, kind: MoveKind, n: int, rng):
    """Draw a move of the given kind.

    Returns ``(new_model, MoveMeta)`` or ``None`` when the drawn interval has
    no admissible position (the caller treats that as a rejection).
    """
    c = model.bounds(n)
    k = model.k
    if kind is MoveKind.BIRTH:
        u = draw_index(rng, k + 1)
        gap = c[u + 1] - c[u] - 1
        if gap == 0:
            return None
        v = c[u] + 1 + draw_index(rng, gap)
        new = model.positions[:u] + (v,) + model.positions[u:]
        return ChangePointModel(new), MoveMeta(u, gap)
    if k == 0:
        return None
    u = 1 + draw_index(rng, k)
    if kind is MoveKind.DEATH:
        new = model.positions[:u - 1] + model.positions[u:]
        return ChangePointModel(new), MoveMeta(u, c[u + 1] - c[u - 1] - 1)
    width = c[u + 1] - c[u - 1] - 2
    if width == 0:
        return None
    r = draw_index(rng, width)
    left = c[u] - c[u - 1] - 1
    v = c[u - 1] + 1 + r if r < left else c[u] + 1 + (r - left)
    new = model.positions[:u - 1] + (v,) + model.positions[u:]
    return ChangePointModel(new), MoveMeta(u, width)


def log_proposal_ratio(kind: MoveKind, current: ChangePointModel, meta: MoveMeta,
                       hyper: Hyper) -> float:
    """``log q(proposed -> current) - log q(current -> proposed)``."""
    k = current.k
    if kind is MoveKind.BIRTH:
        return (_log_q(k + 1, k, hyper.k_min, hyper.k_max)
                - _log_q(k, k + 1, hyper.k_min, hyper.k_max) + math.log(meta.width))
    if kind is MoveKind.DEATH:
        return (_log_q(k - 1, k, hyper.k_min, hyper.k_max)
                - _log_q(k, k - 1, hyper.k_min, hyper.k_max) - math.log(meta.width))
    return 0.0


def accept_log_ratio(kind: MoveKind, current: ChangePointModel, proposed: ChangePointModel,
                     meta: MoveMeta, theta, data: Dataset, hyper: Hyper) -> float:
    """Log acceptance ratio of a move under the weights ``theta``.

    ``theta`` is indexed by region ``k - k_min``; pass zeros for plain
    reversible-jump MH.
    """
    theta_part = theta[current.k - hyper.k_min] - theta[proposed.k - hyper.k_min]
    delta = (log_marginal_posterior(proposed, data, hyper)
             - log_marginal_posterior(current, data, hyper))
    return theta_part + delta + log_proposal_ratio(kind, current, meta, hyper)


# ---------------------------------------------------------------------------
# sampler target


@njit(cache=True)
def _propose_kernel(x, y, params, rng):
    S1, S2, alpha, beta, log_lam, k_min, k_max = params
    k = x[0]
    kind = _choose_kind(rng.random(), k, k_min, k_max)
    # x = [k, c_0, c_1, ..., c_k, c_{k+1}, padding]
    if kind == 0:
        u = min(int(rng.random() * (k + 1)), k)
        lo = x[1 + u]
        gap = x[2 + u] - lo - 1
        if gap == 0:
            return False, 0.0
        v = lo + 1 + min(int(rng.random() * gap), gap - 1)
        y[0] = k + 1
        for i in range(1, u + 2):
            y[i] = x[i]
        y[u + 2] = v
        for i in range(u + 2, k + 3):
            y[i + 1] = x[i]
        log_q = _log_q(k + 1, k, k_min, k_max) - _log_q(k, k + 1, k_min, k_max) + math.log(gap)
        return True, log_q
    if k == 0:
        return False, 0.0
    u = 1 + min(int(rng.random() * k), k - 1)
    prev = x[u]
    cur = x[u + 1]
    nxt = x[u + 2]
    if kind == 1:
        y[0] = k - 1
        for i in range(1, u + 1):
            y[i] = x[i]
        for i in range(u + 2, k + 3):
            y[i - 1] = x[i]
        y[k + 2] = 0
        log_q = (_log_q(k - 1, k, k_min, k_max) - _log_q(k, k - 1, k_min, k_max)
                 - math.log(nxt - prev - 1))
        return True, log_q
    width = nxt - prev - 2
    if width == 0:
        return False, 0.0
    r = min(int(rng.random() * width), width - 1)
    left = cur - prev - 1
    v = prev + 1 + r if r < left else cur + 1 + (r - left)
    y[:] = x
    y[u + 1] = v
    return True, 0.0


@njit(cache=True)
def _evaluate_kernel(x, params):
    S1, S2, alpha, beta, log_lam, k_min, k_max = params
    k = x[0]
    return _log_post(x[1:], k, S1, S2, alpha, beta, log_lam), k - k_min, float(k)


class ChangePointTarget:
    """:class:`~ssamc.sampler.TargetModel` over configurations with ``k_min <= k <= k_max``."""

    def __init__(self, data: Dataset, hyper: Hyper):
        if hyper.k_max > data.n - 1:
            raise ContractError(f"k_max={hyper.k_max} exceeds n-1={data.n - 1}")
        self.data = data
        self.hyper = hyper
        self.m = hyper.partition.m
        self.capital_lambda = hyper.partition.capital_lambda

    def log_psi(self, x: ChangePointModel) -> float:
        return log_marginal_posterior(x, self.data, self.hyper)

    def region_index(self, x: ChangePointModel) -> int:
        return self.hyper.partition.region_index(x.k)

    def lambda_value(self, x: ChangePointModel) -> float:
        return float(x.k)

    def propose(self, x: ChangePointModel, rng):
        kind = choose_move(x.k, self.hyper, rng)
        out = propose(x, kind, self.data.n, rng)
        if out is None:
            return None
        y, meta = out
        return y, log_proposal_ratio(kind, x, meta, self.hyper)

    def initial_state(self, rng) -> ChangePointModel:
        k = self.hyper.k_min + draw_index(rng, self.m)
        pos = np.sort(rng.choice(self.data.n - 1, size=k, replace=False)) + 1
        return ChangePointModel(tuple(pos.tolist()))

    def pack(self, x: ChangePointModel) -> np.ndarray:
        a = np.zeros(self.hyper.k_max + 3, dtype=np.int64)
        b = x.bounds(self.data.n)
        a[0] = x.k
        a[1:len(b) + 1] = b
        return a

    def unpack(self, a: np.ndarray) -> ChangePointModel:
        k = int(a[0])
        return ChangePointModel(tuple(int(v) for v in a[2:k + 2]))

    def kernel(self) -> CompiledKernel:
        h = self.hyper
        params = (self.data.s1, self.data.s2, float(h.alpha), float(h.beta),
                  math.log(h.lambda_prior), int(h.k_min), int(h.k_max))
        return CompiledKernel(_propose_kernel, _evaluate_kernel, params, self.pack, self.unpack)


# ---------------------------------------------------------------------------
# exact oracles

MAX_ENUMERATION_N = 16


def enumerate_exact_posterior(data: Dataset, hyper: Hyper) -> np.ndarray:
    """Exact ``P(k change points | Z)`` for ``k = 0..n-1`` by brute force."""
    n = data.n
    if n > MAX_ENUMERATION_N:
        raise ContractError(
            f"enumeration visits 2^(n-1) configurations; n={n} exceeds {MAX_ENUMERATION_N}")
    per_k = [[] for _ in range(n)]
    for mask in itertools.product((0, 1), repeat=n - 1):
        model = ChangePointModel(tuple(i + 1 for i, b in enumerate(mask) if b))
        per_k[model.k].append(log_marginal_posterior(model, data, hyper))
    log_mass = np.array([logsumexp(v) for v in per_k])
    return np.exp(log_mass - logsumexp(log_mass))


@njit(cache=True)
def _segment_dp(S1, S2, alpha, beta, k_max, use_max):
    # F[k, j]: log-sum (or max) over splits of z_1..z_j into k+1 blocks
    n = S1.shape[0] - 1
    F = np.full((k_max + 1, n + 1), -np.inf)
    arg = np.zeros((k_max + 1, n + 1), dtype=np.int64)
    for j in range(1, n + 1):
        F[0, j] = _block(j, S1[j], S2[j], alpha, beta)
    for k in range(1, k_max + 1):
        for j in range(k + 1, n + 1):
            best = -np.inf
            best_i = 0
            acc = 0.0
            terms = np.empty(j - k)
            for i in range(k, j):
                t = F[k - 1, i] + _block(j - i, S1[j] - S1[i], S2[j] - S2[i], alpha, beta)
                terms[i - k] = t
                if t > best:
                    best = t
                    best_i = i
            if use_max:
                F[k, j] = best
            else:
                for t in terms:
                    acc += math.exp(t - best)
                F[k, j] = best + math.log(acc)
            arg[k, j] = best_i
    return F, arg


def _size_terms(n: int, ks: np.ndarray, hyper: Hyper) -> np.ndarray:
    return np.array([
        (k + 1) * (hyper.alpha * math.log(hyper.beta) - math.lgamma(hyper.alpha))
        + math.lgamma(n - k) + k * math.log(hyper.lambda_prior) + 0.5 * (k + 1) * LOG_2PI
        for k in ks])


def exact_posterior_by_recursion(data: Dataset, hyper: Hyper) -> np.ndarray:
    """Exact ``P(k | Z)`` restricted to ``k_min..k_max``, by dynamic programming.

    Sums the blockwise-factorised posterior over all segmentations in
    ``O(k_max n^2)``, so it scales to the full 1000-observation series.
    """
    F, _ = _segment_dp(data.s1, data.s2, hyper.alpha, hyper.beta, hyper.k_max, False)
    ks = np.arange(hyper.k_min, hyper.k_max + 1)
    log_mass = F[ks, data.n] + _size_terms(data.n, ks, hyper)
    return np.exp(log_mass - logsumexp(log_mass))


def exact_map(data: Dataset, hyper: Hyper) -> tuple:
    """Highest-posterior configuration with ``k_min <= k <= k_max`` and its log posterior."""
    F, arg = _segment_dp(data.s1, data.s2, hyper.alpha, hyper.beta, hyper.k_max, True)
    ks = np.arange(hyper.k_min, hyper.k_max + 1)
    scores = F[ks, data.n] + _size_terms(data.n, ks, hyper)
    k = int(ks[np.argmax(scores)])
    pos = []
    j = data.n
    for kk in range(k, 0, -1):
        j = int(arg[kk, j])
        pos.append(j)
    model = ChangePointModel(tuple(reversed(pos)))
    return model, log_marginal_posterior(model, data, hyper)


def _block_integral(zb: np.ndarray, hyper: Hyper, step: float) -> float:
    # log of the double integral over (mu, sigma^2) of one block's likelihood
    # times its prior kernel, by the trapezoid rule in (t, s) with
    # mu = mean + t * sigma / sqrt(L) and sigma^2 = exp(s)
    L = zb.size
    centre = float(zb.mean())
    spread = float(((zb - centre) ** 2).sum())
    s_mode = math.log((hyper.beta + 0.5 * spread) / (0.5 * L + hyper.alpha + 1.0))

    t = np.arange(-12.0, 12.0 + step / 2, step)
    dev = zb - centre

    def log_integrand(s):
        # standardised residuals (z - mu) / sigma, kept finite for huge sigma^2
        inv_sigma = np.exp(-0.5 * s)[:, None, None]
        r = dev[None, None, :] * inv_sigma - t[None, :, None] / math.sqrt(L)
        ell = (-(0.5 * L + hyper.alpha + 1.0) * s[:, None]
               - 0.5 * (r ** 2).sum(axis=2) - hyper.beta * np.exp(-s)[:, None]
               + 1.5 * s[:, None] - 0.5 * math.log(L))
        return logsumexp(ell, axis=1) + math.log(step)

    lo, hi = s_mode - 10.0, s_mode + 10.0
    peak = log_integrand(np.array([s_mode]))[0]
    while log_integrand(np.array([lo]))[0] > peak - 50.0:
        lo -= 10.0
    while log_integrand(np.array([hi]))[0] > peak - 50.0:
        hi += 100.0
    grid = np.arange(lo, hi + step / 2, step)
    chunks = [log_integrand(grid[i:i + 512]) for i in range(0, grid.size, 512)]
    return float(logsumexp(np.concatenate(chunks)) + math.log(step))


def log_marginal_by_quadrature(model: ChangePointModel, data: Dataset, hyper: Hyper,
                               tol: float = 1e-8, max_halvings: int = 6) -> float:
    """Integrate ``exp(log_joint_full)`` numerically, one block at a time.

    Each block's 2-D integral is recomputed on successively halved grids
    until two consecutive values agree within ``tol`` (in log units).  Only
    meant for short series; it reproduces :func:`log_marginal_posterior`
    without using its closed form.
    """
    model.check(data.n)
    k = model.k
    total = ((k + 1) * (hyper.alpha * math.log(hyper.beta) - math.lgamma(hyper.alpha))
             + math.lgamma(data.n - k) + k * math.log(hyper.lambda_prior))
    c = model.bounds(data.n)
    for lo, hi in zip(c, c[1:]):
        zb = data.z[lo:hi]
        step = 0.5
        prev = _block_integral(zb, hyper, step)
        for _ in range(max_halvings):
            step /= 2.0
            cur = _block_integral(zb, hyper, step)
            done = abs(cur - prev) < tol
            prev = cur
            if done:
                break
        total += prev
    return total
