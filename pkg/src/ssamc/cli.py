"""Command-line front end.

Examples::

    ssamc mixture --runs 20 --out results/mixture
    ssamc changepoint --algo ssamc --algo samc:t0=100:iters=2000000 --format json
    ssamc toy-check --runs 5 --scale 0.1
    ssamc oracle changepoint --dataset-seed 1

Exit status is 0 on success, 2 for configuration or I/O errors and 3 when
``--fail-on-diagnostic`` is set and the cross-run diagnostic fails.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import changepoint as cp
from .core import ContractError
from .experiments import (EXPERIMENTS, FORMATS, ORACLE_RUN_INDEX, AlgoSpec, ExperimentConfig,
                          default_algo, format_table, max_theta_error, run_experiment)
from .mixture import true_region_probs
from .sampler import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_DIAGNOSTIC = 0, 2, 3

# config-file key -> (argparse dest, converter)
_CONFIG_KEYS = {
    "algo": ("algo", str), "kappa": ("kappa", int), "t0": ("t0", float),
    "iters": ("iters", int), "runs": ("runs", int), "seed": ("seed", int),
    "out": ("out", str), "format": ("format", str), "scale": ("scale", float),
    "tolerance": ("tolerance", float), "dataset-seed": ("dataset_seed", int),
    "truth-samples": ("truth_samples", int), "workers": ("workers", int),
    "allow-unequal-budget": ("allow_unequal_budget", "bool"),
    "fail-on-diagnostic": ("fail_on_diagnostic", "bool"),
}
_DEFAULTS = {"runs": 20, "seed": 0, "format": "csv", "scale": 1.0, "tolerance": 0.5,
             "dataset_seed": cp.DEFAULT_DATASET_SEED, "truth_samples": 10_000_000,
             "workers": 1, "allow_unequal_budget": False, "fail_on_diagnostic": False}


def _as_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ContractError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment.

    Keys are the long flag names without dashes prefix (``t0``, ``runs``,
    ``allow-unequal-budget``...).  ``algo`` may repeat or hold a
    comma-separated list.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ContractError(f"cannot read config {path}: {exc}") from exc
    out: dict = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        key = key.replace("_", "-")
        if not sep or key not in _CONFIG_KEYS:
            raise ContractError(f"{path}:{n}: expected one of {sorted(_CONFIG_KEYS)} as key=value")
        dest, conv = _CONFIG_KEYS[key]
        try:
            if dest == "algo":
                out.setdefault("algo", []).extend(a.strip() for a in val.split(",") if a.strip())
            else:
                out[dest] = _as_bool(val) if conv == "bool" else conv(val)
        except ValueError as exc:
            raise ContractError(f"{path}:{n}: bad value for {key}: {val!r}") from exc
    return out


def parse_algo(text: str, experiment: str, kappa=None, t0=None, iters=None) -> AlgoSpec:
    """``name[:kappa=K][:t0=T][:iters=N]`` on top of the experiment default.

    Global ``kappa`` only applies to the multi-sample algorithms.
    """
    name, *opts = text.split(":")
    spec = default_algo(experiment, name)
    if kappa is not None and name in ("msamc", "ssamc"):
        spec = replace(spec, kappa=kappa)
    if t0 is not None:
        spec = replace(spec, t0=t0)
    if iters is not None:
        spec = replace(spec, iterations=iters)
    fields = {"kappa": ("kappa", int), "t0": ("t0", float), "iters": ("iterations", int)}
    for opt in opts:
        key, _, val = opt.partition("=")
        if key not in fields:
            raise ContractError(f"unknown option {key!r} in --algo {text!r}")
        attr, conv = fields[key]
        try:
            spec = replace(spec, **{attr: conv(val)})
        except ValueError as exc:
            raise ContractError(f"bad value in --algo {text!r}") from exc
    return spec


def build_config(args: argparse.Namespace) -> tuple[ExperimentConfig, dict]:
    settings = dict(_DEFAULTS)
    if args.config:
        settings.update(read_config(args.config))
    for key, val in vars(args).items():
        if val is not None and key not in ("command", "config"):
            settings[key] = val
    names = settings.get("algo") or None
    specs = ()
    if names or any(settings.get(k) is not None for k in ("kappa", "t0", "iters")):
        names = names or [a.name for a in ExperimentConfig(args.command).algorithms]
        specs = tuple(parse_algo(n, args.command, settings.get("kappa"), settings.get("t0"),
                                 settings.get("iters")) for n in names)
    cfg = ExperimentConfig(
        experiment=args.command, algorithms=specs, runs=settings["runs"],
        base_seed=settings["seed"], out=settings.get("out"), format=settings["format"],
        allow_unequal_budget=settings["allow_unequal_budget"],
        dataset_seed=settings["dataset_seed"], truth_samples=settings["truth_samples"],
        tolerance=settings["tolerance"], workers=settings["workers"])
    if settings["scale"] != 1.0:
        if settings["scale"] <= 0:
            raise ContractError("scale must be positive")
        cfg = cfg.scaled(settings["scale"])
    return cfg, settings


def _experiment_parser(sub, name: str, help_text: str):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--algo", action="append",
                   help="algorithm, optionally name:kappa=K:t0=T:iters=N (repeatable)")
    p.add_argument("--kappa", type=int, help="samples per iteration for msamc/ssamc")
    p.add_argument("--t0", type=float, help="gain factor t0 for every algorithm")
    p.add_argument("--iters", type=int, help="iterations N for every algorithm")
    p.add_argument("--runs", type=int, help="independent runs per algorithm (default 20)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=FORMATS, help="output format (default csv)")
    p.add_argument("--config", help="key=value file mirroring these flags; flags win")
    p.add_argument("--scale", type=float, help="multiply every iteration count")
    p.add_argument("--tolerance", type=float, help="cross-run theta tolerance (default 0.5)")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--allow-unequal-budget", action="store_true", default=None)
    p.add_argument("--fail-on-diagnostic", action="store_true", default=None)
    if name == "mixture":
        p.add_argument("--truth-samples", type=int, help="oracle sample size (default 1e7)")
    if name == "changepoint":
        p.add_argument("--dataset-seed", type=int, help="seed of the simulated series")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssamc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_parser(sub, "mixture", "region probabilities of the Gaussian mixture")
    _experiment_parser(sub, "changepoint", "posterior over the number of change points")
    _experiment_parser(sub, "toy-check", "convergence on a finite toy target")
    o = sub.add_parser("oracle", help="reference values: mixture truth, exact posteriors")
    o.add_argument("target", choices=("mixture", "changepoint", "enumerate"))
    o.add_argument("--samples", type=int, default=10_000_000, help="mixture oracle size")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--dataset-seed", type=int, default=cp.DEFAULT_DATASET_SEED)
    o.add_argument("--data", help="dataset file for 'enumerate'")
    o.add_argument("--out", help="write the CSV here instead of stdout")
    return parser


def _oracle(args) -> int:
    if args.target == "mixture":
        probs = true_region_probs(args.samples, make_rng(args.seed, ORACLE_RUN_INDEX))
        header, rows = ("index", "probability"), zip(range(1, probs.size + 1), probs)
    elif args.target == "changepoint":
        hyper = cp.Hyper()
        probs = cp.exact_posterior_by_recursion(cp.generate_dataset(args.dataset_seed), hyper)
        header, rows = ("k", "exact_probability"), zip(range(hyper.k_min, hyper.k_max + 1), probs)
    else:
        if not args.data:
            raise ContractError("oracle enumerate needs --data FILE")
        data = cp.Dataset.load(args.data)
        probs = cp.enumerate_exact_posterior(data, cp.Hyper(k_min=0, k_max=data.n - 1))
        header, rows = ("k", "exact_probability"), enumerate(probs)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows((k, repr(float(p))) for k, p in rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "oracle":
            return _oracle(args)
        cfg, settings = build_config(args)
        outcome = run_experiment(cfg)
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_table(outcome))
    if outcome.setup.theta_target is not None:
        for name, res in outcome.results.items():
            errs = [max_theta_error(r, outcome.setup.theta_target) for r in res]
            print(f"{name}: max |theta - theta*| median {np.median(errs):.4f}, worst {max(errs):.4f}")
    if "map" in (rep := _map_report(outcome)):
        print(rep)
    for name, d in outcome.diagnostics.items():
        print(f"diagnostic {name}: {'ok' if d.passed else 'FAIL'}: {d.message}")
    if settings["fail_on_diagnostic"] and not outcome.diagnostics_passed:
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def _map_report(outcome) -> str:
    if outcome.config.experiment != "changepoint":
        return ""
    best = max((r for res in outcome.results.values() for r in res), key=lambda r: r.map_log_psi)
    truth = cp.ChangePointModel(cp.TRUE_CHANGE_POINTS)
    true_lp = cp.log_marginal_posterior(truth, outcome.setup.dataset, outcome.setup.model.hyper)
    return (f"true pattern {cp.TRUE_CHANGE_POINTS} log posterior {true_lp:.4f}\n"
            f"map pattern  {best.map_state.positions} log posterior {best.map_log_psi:.4f}")


if __name__ == "__main__":
    sys.exit(main())
