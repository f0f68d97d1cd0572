"""Seeded multi-run experiments, aggregation and convergence diagnostics.

Run ``r`` of every algorithm draws from ``make_rng(base_seed, r)`` (see
:mod:`ssamc.sampler`).  Reference values use a stream that no run uses
(``run_index = ORACLE_RUN_INDEX``).  Results are folded in run order, and
floats are written with ``repr``, so a config and seed fix every output byte.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import changepoint as cp
from .core import ContractError, recenter
from .mixture import MixtureModel, true_region_probs
from .sampler import RunResult, SamplerConfig, make_rng, run
from .toy import smooth_toy

EXPERIMENTS = ("mixture", "changepoint", "toy-check")
FORMATS = ("csv", "json")
ORACLE_RUN_INDEX = 2 ** 31


@dataclass(frozen=True)
class AlgoSpec:
    """One algorithm with its samples per iteration, gain ``t0`` and iteration count."""

    name: str
    kappa: int = 1
    t0: float = 1.0
    iterations: int = 1

    def __post_init__(self):
        SamplerConfig(self.name, self.iterations, self.kappa, self.t0)

    @property
    def energy_budget(self) -> int:
        return self.kappa * self.iterations

    def scaled(self, factor: float) -> "AlgoSpec":
        return replace(self, iterations=max(1, int(round(self.iterations * factor))))


DEFAULT_ALGOS = {
    "mixture": (AlgoSpec("ssamc", 20, 25.0, 500_000), AlgoSpec("samc", 1, 500.0, 10_000_000)),
    "changepoint": (AlgoSpec("ssamc", 20, 5.0, 100_000), AlgoSpec("samc", 1, 100.0, 2_000_000),
                    AlgoSpec("msamc", 20, 5.0, 100_000), AlgoSpec("plain-mh", 1, 1.0, 2_000_000)),
    "toy-check": (AlgoSpec("ssamc", 10, 50.0, 200_000), AlgoSpec("samc", 1, 50.0, 2_000_000)),
}


def default_algo(experiment: str, name: str) -> AlgoSpec:
    """The built-in setting of ``name`` for ``experiment``, or a neutral one."""
    for spec in DEFAULT_ALGOS[experiment]:
        if spec.name == name:
            return spec
    base = DEFAULT_ALGOS[experiment][0]
    kappa = 1 if name in ("samc", "plain-mh") else base.kappa
    return AlgoSpec(name, kappa, base.t0, base.energy_budget // kappa)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    algorithms: tuple = ()
    runs: int = 20
    base_seed: int = 0
    out: Optional[str] = None
    format: str = "csv"
    allow_unequal_budget: bool = False
    dataset_seed: int = cp.DEFAULT_DATASET_SEED
    truth_samples: int = 10_000_000
    tolerance: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ContractError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.algorithms:
            object.__setattr__(self, "algorithms", DEFAULT_ALGOS[self.experiment])
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ContractError(f"algorithm listed twice: {names}")
        if self.runs < 1:
            raise ContractError("runs must be >= 1")
        if self.format not in FORMATS:
            raise ContractError(f"format must be one of {FORMATS}")
        if self.workers < 1:
            raise ContractError("workers must be >= 1")
        budgets = {a.name: a.energy_budget for a in self.algorithms}
        if len(set(budgets.values())) > 1 and not self.allow_unequal_budget:
            raise ContractError(
                f"energy budgets kappa*N differ across algorithms: {budgets}; "
                "pass --allow-unequal-budget to run anyway")

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Same config with every iteration count multiplied by ``factor``."""
        return replace(self, algorithms=tuple(a.scaled(factor) for a in self.algorithms))


@dataclass
class AlgoSummary:
    algorithm: str
    mean: np.ndarray
    sd: np.ndarray
    rmse: Optional[np.ndarray]
    runs: int
    energy_evaluations: int


def aggregate(results: Sequence[RunResult], truth=None) -> AlgoSummary:
    """Per-region mean, sample SD (divisor ``runs - 1``; 0 for one run) and RMSE."""
    if not results:
        raise ContractError("need at least one run")
    est = np.array([r.p_hat for r in results], dtype=float)
    if est.ndim != 2:
        raise ContractError("runs report estimates of different lengths")
    sd = est.std(axis=0, ddof=1) if len(results) > 1 else np.zeros(est.shape[1])
    sd[np.all(est == est[0], axis=0)] = 0.0  # no rounding residue for constant columns
    rmse = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.shape != (est.shape[1],):
            raise ContractError(f"truth has shape {truth.shape}, estimates have {est.shape[1]} regions")
        rmse = np.sqrt(np.mean((est - truth) ** 2, axis=0))
    return AlgoSummary(results[0].algorithm, est.mean(axis=0), sd, rmse, len(results),
                       results[0].energy_evaluations)


@dataclass
class ConvergenceReport:
    max_deviation: np.ndarray
    visited_mismatch: np.ndarray
    tolerance: float
    passed: bool
    message: str


def diagnose_convergence(results: Sequence[RunResult], tolerance: float) -> ConvergenceReport:
    """Compare the recentred ``theta`` of several runs region by region.

    A region fails when some run deviates from the cross-run mean by more
    than ``tolerance``, or when some runs visited it and others did not.
    """
    if len(results) < 2:
        raise ContractError("convergence diagnostics need at least two runs")
    masks = np.array([r.visited for r in results])
    mismatch = masks.any(axis=0) & ~masks.all(axis=0)
    common = masks.all(axis=0)
    dev = np.zeros(masks.shape[1])
    if common.any():
        # recentre on the regions every run visited, so unvisited drift is ignored
        thetas = np.array([r.final_theta[common] for r in results])
        thetas = np.array([recenter(t) for t in thetas])
        dev[common] = np.abs(thetas - thetas.mean(axis=0)).max(axis=0)
    bad = (dev > tolerance) | mismatch
    if not bad.any():
        msg = f"runs agree within {tolerance:g} in every region"
    else:
        regions = ", ".join(str(i + 1) for i in np.flatnonzero(bad))
        msg = (f"runs disagree in regions {regions}; rerun with a larger t0 "
               "and/or more iterations")
    return ConvergenceReport(dev, mismatch, tolerance, not bad.any(), msg)


# ---------------------------------------------------------------------------
# experiment targets


@dataclass
class Setup:
    model: object
    truth: Optional[np.ndarray]
    labels: np.ndarray  # region number, or k for the change-point model
    dataset: Optional[cp.Dataset] = None
    theta_target: Optional[np.ndarray] = None


def build_setup(cfg: ExperimentConfig) -> Setup:
    if cfg.experiment == "mixture":
        model = MixtureModel()
        truth = true_region_probs(cfg.truth_samples, make_rng(cfg.base_seed, ORACLE_RUN_INDEX))
        return Setup(model, truth, np.arange(1, model.m + 1))
    if cfg.experiment == "changepoint":
        data = cp.generate_dataset(cfg.dataset_seed)
        hyper = cp.Hyper()
        model = cp.ChangePointTarget(data, hyper)
        truth = cp.exact_posterior_by_recursion(data, hyper)
        return Setup(model, truth, np.arange(hyper.k_min, hyper.k_max + 1), dataset=data)
    model = smooth_toy()
    return Setup(model, model.region_probs(), np.arange(1, model.m + 1),
                 theta_target=model.theta_target())


def _one_run(args):
    model, spec, seed, r = args
    return run(model, SamplerConfig(spec.name, spec.iterations, spec.kappa, spec.t0,
                                    seed=seed, run_index=r))


def run_all(model, spec: AlgoSpec, runs: int, base_seed: int, workers: int = 1) -> list:
    """``runs`` independent runs of one algorithm, returned in run-index order."""
    jobs = [(model, spec, base_seed, r) for r in range(runs)]
    if workers == 1:
        return [_one_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_run, jobs))


@dataclass
class ExperimentOutcome:
    config: ExperimentConfig
    setup: Setup
    results: dict
    summaries: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def diagnostics_passed(self) -> bool:
        return all(d.passed for d in self.diagnostics.values())


def run_experiment(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Execute every configured algorithm ``cfg.runs`` times and aggregate.

    Writes the artifact files when ``cfg.out`` is set.
    """
    if cfg.out is not None:
        _check_writable(Path(cfg.out))
    setup = build_setup(cfg)
    results, summaries, diags = {}, {}, {}
    for spec in cfg.algorithms:
        res = run_all(setup.model, spec, cfg.runs, cfg.base_seed, cfg.workers)
        results[spec.name] = res
        summaries[spec.name] = aggregate(res, setup.truth)
        if spec.name != "plain-mh" and cfg.runs > 1:
            diags[spec.name] = diagnose_convergence(res, cfg.tolerance)
    outcome = ExperimentOutcome(cfg, setup, results, summaries, diags)
    if cfg.out is not None:
        write_outputs(outcome, Path(cfg.out))
    return outcome


# ---------------------------------------------------------------------------
# output


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ContractError(f"cannot write to {out}: {exc}") from exc


def _num(v) -> str:
    return repr(float(v))


def estimate_rows(outcome: ExperimentOutcome) -> list:
    rows = []
    for name, res in outcome.results.items():
        for r in res:
            for label, p in zip(outcome.setup.labels, r.p_hat):
                rows.append({"algorithm": name, "run": r.run_index, "index": int(label),
                             "estimate": float(p)})
    return rows


def summary_rows(outcome: ExperimentOutcome) -> list:
    rows = []
    for name, s in outcome.summaries.items():
        for i, label in enumerate(outcome.setup.labels):
            rows.append({"algorithm": name, "index": int(label), "mean": float(s.mean[i]),
                         "sd": float(s.sd[i]),
                         "rmse": None if s.rmse is None else float(s.rmse[i]),
                         "energy_evals": s.energy_evaluations})
    return rows


def _extras(outcome: ExperimentOutcome) -> dict:
    extra = {"diagnostics": {
        name: {"passed": d.passed, "message": d.message,
               "max_deviation": d.max_deviation.tolist(),
               "visited_mismatch": d.visited_mismatch.astype(int).tolist()}
        for name, d in outcome.diagnostics.items()}}
    if outcome.setup.truth is not None:
        extra["truth"] = {int(k): float(v) for k, v in zip(outcome.setup.labels, outcome.setup.truth)}
    if outcome.config.experiment == "changepoint":
        best = max((r for res in outcome.results.values() for r in res),
                   key=lambda r: r.map_log_psi)
        hyper = outcome.setup.model.hyper
        data = outcome.setup.dataset
        extra["map"] = {
            "true_positions": list(cp.TRUE_CHANGE_POINTS),
            "map_positions": list(best.map_state.positions),
            "map_log_posterior": best.map_log_psi,
            "true_log_posterior": cp.log_marginal_posterior(
                cp.ChangePointModel(cp.TRUE_CHANGE_POINTS), data, hyper),
        }
    return extra


def write_outputs(outcome: ExperimentOutcome, out: Path) -> list:
    """Write estimates, summary and report files under ``out``; returns the paths."""
    out.mkdir(parents=True, exist_ok=True)
    est, summ = estimate_rows(outcome), summary_rows(outcome)
    paths = []
    if outcome.config.format == "csv":
        for name, rows, cols in (("estimates.csv", est, ("algorithm", "run", "index", "estimate")),
                                 ("summary.csv", summ, ("algorithm", "index", "mean", "sd", "rmse",
                                                        "energy_evals"))):
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in rows:
                    w.writerow(["" if row[c] is None else _num(row[c]) if isinstance(row[c], float)
                                else row[c] for c in cols])
            paths.append(out / name)
    else:
        for name, rows in (("estimates.json", est), ("summary.json", summ)):
            (out / name).write_text(json.dumps(rows, indent=1) + "\n")
            paths.append(out / name)
    (out / "report.json").write_text(json.dumps(_extras(outcome), indent=1, sort_keys=True) + "\n")
    paths.append(out / "report.json")
    if outcome.setup.dataset is not None:
        outcome.setup.dataset.save(out / "dataset.txt")
        paths.append(out / "dataset.txt")
    return paths


def format_table(outcome: ExperimentOutcome, percent: bool = True) -> str:
    """Plain-text table of mean (SD) per region for every algorithm."""
    scale = 100.0 if percent else 1.0
    names = list(outcome.summaries)
    head = f"{'index':>6}" + ("" if outcome.setup.truth is None else f"{'truth':>12}")
    head += "".join(f"{n:>24}" for n in names)
    lines = [head]
    for i, label in enumerate(outcome.setup.labels):
        line = f"{int(label):>6}"
        if outcome.setup.truth is not None:
            line += f"{outcome.setup.truth[i] * scale:>12.4f}"
        for n in names:
            s = outcome.summaries[n]
            line += f"{s.mean[i] * scale:>13.4f} ({s.sd[i] * scale:7.4f})"
        lines.append(line)
    return "\n".join(lines)


def max_theta_error(result: RunResult, theta_target) -> float:
    """Largest ``|theta_i - theta*_i|`` after recentring both."""
    return float(np.max(np.abs(recenter(result.final_theta) - recenter(theta_target))))


def pooled_sd(a: AlgoSummary, b: AlgoSummary) -> np.ndarray:
    return np.sqrt((a.sd ** 2 + b.sd ** 2) / 2.0)


def probability_sums_ok(outcome: ExperimentOutcome, tol: float = 1e-9) -> bool:
    return all(math.isclose(float(r.p_hat.sum()), 1.0, abs_tol=tol)
               for res in outcome.results.values() for r in res)
