"""Metropolis-Hastings transitions on the reweighted target and the run loops.

Two engines execute the same algorithm:

* a reference engine written against the :class:`TargetModel` protocol, one
  Python call per proposal;
* a compiled engine (numba) used when the model exposes a
  :class:`CompiledKernel`.

Both consume the per-run random stream in the same order and share the
numeric helpers, so for a given seed they return identical results.  The
reference engine exists to make that claim testable.

Random streams
--------------
Run ``r`` of an experiment with base seed ``s`` draws from
``numpy.random.Generator(numpy.random.Philox(numpy.random.SeedSequence([s, r])))``:
a Philox-4x64 counter-based generator keyed by NumPy's ``SeedSequence``
hash of ``(s, r)``.  Uniforms come from ``Generator.random`` and normals from
``Generator.standard_normal``; discrete choices use
``min(floor(u * n), n - 1)`` on a uniform ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Protocol

import numpy as np
from numba import njit

from .core import ContractError, check_pi, estimate_probabilities, uniform_pi
from .smoothing import DEFAULT_SUPPORT, _bandwidth, _smooth

ALGORITHMS = ("samc", "msamc", "ssamc", "plain-mh")
_ALGO_CODE = {"samc": 0, "msamc": 1, "ssamc": 2, "plain-mh": 3}
_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int, run_index: int = 0) -> np.random.Generator:
    """Per-run random stream derived from ``(seed, run_index)``."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(seed) & _SEED_MASK, int(run_index)]))
    )


def draw_index(rng, n: int) -> int:
    """Uniform draw from ``{0, ..., n-1}`` using one uniform variate."""
    return min(int(rng.random() * n), n - 1)


class TargetModel(Protocol):
    """What a target must provide to be sampled.

    ``region_index`` returns a 1-based region number in ``1..m``.
    ``propose`` returns ``(y, log q(y, x) - log q(x, y))`` or ``None`` when the
    drawn move is degenerate (counted as a rejection).
    """

    m: int
    capital_lambda: float

    def log_psi(self, x) -> float: ...

    def region_index(self, x) -> int: ...

    def lambda_value(self, x) -> float: ...

    def propose(self, x, rng) -> Optional[tuple[Any, float]]: ...

    def initial_state(self, rng) -> Any: ...


@dataclass(frozen=True)
class CompiledKernel:
    """Numba-compiled counterpart of a :class:`TargetModel`.

    ``propose(x, y, params, rng) -> (valid, log_q)`` writes the proposal into
    ``y``; ``evaluate(x, params) -> (log_psi, region0, lam)`` uses a 0-based
    region.  ``pack``/``unpack`` convert between model states and the fixed
    size arrays the kernel works on.
    """

    propose: Callable
    evaluate: Callable
    params: tuple
    pack: Callable[[Any], np.ndarray]
    unpack: Callable[[np.ndarray], Any]


@dataclass(frozen=True)
class SamplerConfig:
    algorithm: str
    iterations: int
    kappa: int = 1
    t0: float = 1.0
    pi: Optional[np.ndarray] = None
    support_c: float = DEFAULT_SUPPORT
    seed: int = 0
    run_index: int = 0
    trace_every: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.kappa < 1:
            raise ContractError("kappa must be >= 1")
        if self.algorithm == "samc" and self.kappa != 1:
            raise ContractError("samc draws one sample per iteration (kappa = 1)")
        if self.algorithm == "plain-mh" and self.kappa != 1:
            raise ContractError("plain-mh takes one MH step per iteration (kappa = 1)")
        if self.t0 <= 0:
            raise ContractError("t0 must be positive")

    @property
    def energy_budget(self) -> int:
        return self.kappa * self.iterations


@dataclass
class RunResult:
    algorithm: str
    final_theta: np.ndarray
    visits: np.ndarray
    p_hat: np.ndarray
    energy_evaluations: int
    accepted: int
    map_state: Any = None
    map_log_psi: float = -math.inf
    theta_trace: Optional[np.ndarray] = None
    seed: int = 0
    run_index: int = 0

    @property
    def visited(self) -> np.ndarray:
        return self.visits > 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.energy_evaluations if self.energy_evaluations else 0.0


# ---------------------------------------------------------------------------
# shared numeric helpers (also called from the reference engine)


@njit(cache=True)
def _gain(t0, t):
    return t0 / max(t0, float(t))


@njit(cache=True)
def _sa_update(theta, g, p_hat, pi):
    # theta <- recenter(theta + g (p_hat - pi)), in place
    m = theta.shape[0]
    s = 0.0
    for i in range(m):
        theta[i] = theta[i] + g * (p_hat[i] - pi[i])
        s += theta[i]
    mean = s / m
    for i in range(m):
        theta[i] = theta[i] - mean


@njit(cache=True)
def _estimate_from_counts(algo, counts, kappa, lam_buf, t, t0, capital_lambda, c, p_hat):
    if algo == 2:
        h = _bandwidth(_gain(t0, t), lam_buf, kappa)
        _smooth(counts, float(kappa), capital_lambda, h, c, p_hat)
    else:
        for i in range(counts.shape[0]):
            p_hat[i] = counts[i] / kappa


# ---------------------------------------------------------------------------
# reference engine


@dataclass
class ChainState:
    x: Any
    log_psi: float
    region: int  # 0-based
    lam: float


@dataclass
class MapTracker:
    state: Any = None
    log_psi: float = -math.inf

    def offer(self, x, log_psi: float) -> None:
        if log_psi > self.log_psi:
            self.state = x
            self.log_psi = log_psi


def evaluate_state(model: TargetModel, x) -> ChainState:
    return ChainState(x, float(model.log_psi(x)), int(model.region_index(x)) - 1,
                      float(model.lambda_value(x)))


def mh_step(state: ChainState, theta, model: TargetModel, rng,
            tracker: Optional[MapTracker] = None) -> tuple[ChainState, bool]:
    """One MH update whose invariant density is ``psi(x) / exp(theta[J(x)])``."""
    prop = model.propose(state.x, rng)
    if prop is None:
        return state, False
    y, log_q = prop
    cand = evaluate_state(model, y)
    if tracker is not None:
        tracker.offer(y, cand.log_psi)
    log_r = cand.log_psi - state.log_psi + theta[state.region] - theta[cand.region] + log_q
    u = rng.random()
    if log_r >= 0.0 or u < math.exp(log_r):
        return cand, True
    return state, False


def run_iteration(state: ChainState, theta, model: TargetModel, kappa: int, rng,
                  tracker: Optional[MapTracker] = None):
    """``kappa`` chained MH steps under one frozen ``theta``.

    Returns ``(state, counts, lambda_values, n_accepted)``.
    """
    counts = np.zeros(model.m, dtype=np.int64)
    lam = np.empty(kappa)
    n_acc = 0
    for l in range(kappa):
        state, acc = mh_step(state, theta, model, rng, tracker)
        n_acc += acc
        counts[state.region] += 1
        lam[l] = state.lam
    return state, counts, lam, n_acc


def _run_reference(model: TargetModel, cfg: SamplerConfig, pi: np.ndarray, rng):
    m = model.m
    algo = _ALGO_CODE[cfg.algorithm]
    theta = np.zeros(m)
    visits = np.zeros(m, dtype=np.int64)
    p_hat = np.empty(m)
    tracker = MapTracker()
    x0 = model.initial_state(rng)
    state = evaluate_state(model, x0)
    tracker.offer(x0, state.log_psi)
    n_acc = 0
    trace = []
    kappa = cfg.kappa
    for t in range(1, cfg.iterations + 1):
        state, counts, lam, acc = run_iteration(state, theta, model, kappa, rng, tracker)
        n_acc += acc
        visits += counts
        if algo != 3:
            _estimate_from_counts(algo, counts, kappa, lam, t, float(cfg.t0),
                                  float(model.capital_lambda), float(cfg.support_c), p_hat)
            _sa_update(theta, _gain(float(cfg.t0), t + 1), p_hat, pi)
        if cfg.trace_every and t % cfg.trace_every == 0:
            trace.append(theta.copy())
    trace_arr = np.array(trace).reshape(-1, m) if cfg.trace_every else None
    return theta, visits, n_acc, tracker.state, tracker.log_psi, trace_arr


# ---------------------------------------------------------------------------
# compiled engine


@njit
def _drive(propose, evaluate, x, params, algo, kappa, n_iter, t0, pi,
           capital_lambda, c, trace_every, rng):
    m = pi.shape[0]
    theta = np.zeros(m)
    visits = np.zeros(m, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    p_hat = np.empty(m)
    lam_buf = np.empty(kappa)
    n_trace = n_iter // trace_every if trace_every > 0 else 0
    trace = np.empty((n_trace, m))
    y = x.copy()
    best = x.copy()
    lp, j, lam = evaluate(x, params)
    best_lp = lp
    n_acc = 0
    for t in range(1, n_iter + 1):
        counts[:] = 0
        for l in range(kappa):
            valid, log_q = propose(x, y, params, rng)
            if valid:
                lpy, jy, lamy = evaluate(y, params)
                if lpy > best_lp:
                    best_lp = lpy
                    best[:] = y
                log_r = lpy - lp + theta[j] - theta[jy] + log_q
                u = rng.random()
                if log_r >= 0.0 or u < math.exp(log_r):
                    x[:] = y
                    lp = lpy
                    j = jy
                    lam = lamy
                    n_acc += 1
            counts[j] += 1
            lam_buf[l] = lam
        for i in range(m):
            visits[i] += counts[i]
        if algo != 3:
            _estimate_from_counts(algo, counts, kappa, lam_buf, t, t0, capital_lambda, c, p_hat)
            _sa_update(theta, _gain(t0, t + 1), p_hat, pi)
        if trace_every > 0 and t % trace_every == 0:
            trace[t // trace_every - 1, :] = theta
    return theta, visits, n_acc, best, best_lp, trace


def _run_compiled(model, kernel: CompiledKernel, cfg: SamplerConfig, pi: np.ndarray, rng):
    x0 = kernel.pack(model.initial_state(rng))
    theta, visits, n_acc, best, best_lp, trace = _drive(
        kernel.propose, kernel.evaluate, x0, kernel.params,
        _ALGO_CODE[cfg.algorithm], cfg.kappa, cfg.iterations, float(cfg.t0), pi,
        float(model.capital_lambda), float(cfg.support_c), cfg.trace_every, rng,
    )
    return (theta, visits, int(n_acc), kernel.unpack(best), float(best_lp),
            trace if cfg.trace_every else None)


# ---------------------------------------------------------------------------
# public run entry points


def run(model: TargetModel, cfg: SamplerConfig, engine: str = "auto",
        rng: Optional[np.random.Generator] = None) -> RunResult:
    """Run ``cfg.algorithm`` on ``model``.

    ``engine`` is ``"auto"`` (compiled when available), ``"compiled"`` or
    ``"reference"``.  ``rng`` defaults to ``make_rng(cfg.seed, cfg.run_index)``.
    """
    pi = uniform_pi(model.m) if cfg.pi is None else check_pi(cfg.pi)
    if pi.shape != (model.m,):
        raise ContractError(f"pi has length {pi.size}, model has {model.m} regions")
    if rng is None:
        rng = make_rng(cfg.seed, cfg.run_index)
    kernel = getattr(model, "kernel", None)
    kernel = kernel() if callable(kernel) else None
    if engine == "reference" or (engine == "auto" and kernel is None):
        out = _run_reference(model, cfg, pi, rng)
    elif engine in ("auto", "compiled"):
        if kernel is None:
            raise ContractError(f"{type(model).__name__} has no compiled kernel")
        out = _run_compiled(model, kernel, cfg, pi, rng)
    else:
        raise ContractError(f"unknown engine {engine!r}")
    theta, visits, n_acc, map_state, map_lp, trace = out
    if cfg.algorithm == "plain-mh":
        p_hat = visits / cfg.iterations
    else:
        p_hat = estimate_probabilities(theta, pi, visits)
    return RunResult(
        algorithm=cfg.algorithm,
        final_theta=theta,
        visits=visits,
        p_hat=p_hat,
        energy_evaluations=cfg.energy_budget,
        accepted=n_acc,
        map_state=map_state,
        map_log_psi=map_lp,
        theta_trace=trace,
        seed=cfg.seed,
        run_index=cfg.run_index,
    )


def _check_algo(cfg: SamplerConfig, name: str):
    if cfg.algorithm != name:
        raise ContractError(f"expected algorithm {name!r}, config says {cfg.algorithm!r}")


def run_samc(model: TargetModel, cfg: SamplerConfig, **kw) -> RunResult:
    _check_algo(cfg, "samc")
    return run(model, cfg, **kw)


def run_msamc(model: TargetModel, cfg: SamplerConfig, **kw) -> RunResult:
    _check_algo(cfg, "msamc")
    return run(model, cfg, **kw)


def run_ssamc(model: TargetModel, cfg: SamplerConfig, **kw) -> RunResult:
    _check_algo(cfg, "ssamc")
    return run(model, cfg, **kw)


def run_plain_mh(model: TargetModel, cfg: SamplerConfig, **kw) -> RunResult:
    _check_algo(cfg, "plain-mh")
    return run(model, cfg, **kw)
