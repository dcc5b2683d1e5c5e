"""Command line entry point.

    contact-rbpf simulate SCENARIO --out truth.csv [--seed S]
    contact-rbpf estimate --scenario SCENARIO --mode constrained --particles N --seed S --out run.csv
    contact-rbpf compare --scenario SCENARIO --seeds K --report report.json --plots DIR
    contact-rbpf sweep --scenario SCENARIO --param noise|particles --values 0.005 0.01 --report sweep.json

SCENARIO is a built-in name (block_wall, gripper_triangle) or a TOML
config path. The default seed comes from $CONTACT_RBPF_SEED, else the
config. Exit codes: 0 ok, 2 bad config or arguments, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .metrics import summarize
from .plots import plot_runs
from .records import write_json, write_run_csv, write_truth_csv
from .runner import FilterFailure, run_filter
from .scenarios import ConfigError, resolve_scenario, scenario_config
from .truth import TruthFailure, generate_truth

SEED_ENV = "CONTACT_RBPF_SEED"
MODES = ("unconstrained", "constrained")
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("contact_rbpf")


def _default_seed(sc) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return sc.seed
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc


def _seed(args, sc) -> int:
    return args.seed if args.seed is not None else _default_seed(sc)


def cmd_simulate(args) -> int:
    sc = resolve_scenario(args.scenario)
    truth = generate_truth(sc, _seed(args, sc))
    write_truth_csv(truth, args.out)
    log.info("wrote %d steps to %s", truth.n_steps, args.out)
    return 0


def cmd_estimate(args) -> int:
    sc = resolve_scenario(args.scenario)
    seed = _seed(args, sc)
    truth = generate_truth(sc, seed)
    run = run_filter(sc, truth, args.mode, seed, args.particles)
    write_run_csv(run, truth, args.out)
    if args.truth_out:
        write_truth_csv(truth, args.truth_out)
    return 0


def compare_seeds(sc, seeds, out_dir=None, plots=None) -> dict:
    """Both filters on each seed; per-seed metrics and counts of constrained wins."""
    per_seed = {}
    for i, seed in enumerate(seeds):
        truth = generate_truth(sc, seed)
        runs = {m: run_filter(sc, truth, m, seed) for m in MODES}
        per_seed[str(seed)] = summarize(runs, truth, sc.windows or None)
        if out_dir is not None:
            write_truth_csv(truth, Path(out_dir) / f"truth_seed{seed}.csv")
            for m, r in runs.items():
                write_run_csv(r, truth, Path(out_dir) / f"{m}_seed{seed}.csv")
        if plots is not None and i == 0:
            plot_runs(truth, runs, plots, prefix=f"{sc.name}_seed{seed}_")
    return {"config": scenario_config(sc), "seeds": list(seeds), "per_seed": per_seed,
            "aggregate": aggregate(per_seed)}


def aggregate(per_seed: dict) -> dict:
    """Mean RMSE per window over seeds, and how often the constrained filter is better."""
    first = next(iter(per_seed.values()))
    out = {}
    for win in first["windows"]:
        entry = {}
        for m in MODES:
            names = list(first[m][win]["rmse"])
            r = np.array([[s[m][win]["rmse"][n] for n in names] for s in per_seed.values()])
            entry[m] = {"mean_rmse": dict(zip(names, np.nanmean(r, axis=0).tolist())),
                        "penetration_steps": int(sum(s[m][win]["penetration_steps"] for s in per_seed.values()))}
        names = list(first[MODES[0]][win]["rmse"])
        entry["constrained_better"] = {
            n: int(sum(s["constrained"][win]["rmse"][n] < s["unconstrained"][win]["rmse"][n]
                       for s in per_seed.values())) for n in names}
        entry["induced_velocity_rmse"] = float(np.mean([s["induced_velocity"][win]["velocity_rmse"]
                                                        for s in per_seed.values()]))
        out[win] = entry
    return out


def cmd_compare(args) -> int:
    sc = resolve_scenario(args.scenario)
    if args.particles:
        sc = replace(sc, n_particles=args.particles)
    seed0 = _seed(args, sc)
    seeds = list(range(seed0, seed0 + args.seeds))
    report = compare_seeds(sc, seeds, args.out_dir, args.plots)
    write_json(report, args.report)
    agg = report["aggregate"]
    for win, e in agg.items():
        log.info("%s: constrained better on %s of %d seeds", win, e["constrained_better"], len(seeds))
    return 0


def cmd_sweep(args) -> int:
    sc = resolve_scenario(args.scenario)
    seed0 = _seed(args, sc)
    seeds = list(range(seed0, seed0 + args.seeds))
    results = []
    for value in args.values:
        if args.param == "noise":
            # scales the measurement noise; the filter uses the same R
            s = replace(sc, sigma_pos=value, sigma_theta=value)
        else:
            if int(value) != value or value < 1:
                raise ConfigError("particle counts must be positive integers")
            s = replace(sc, n_particles=int(value))
        rep = compare_seeds(s, seeds)
        results.append({"value": value, "aggregate": rep["aggregate"]})
    write_json({"config": scenario_config(sc), "param": args.param, "seeds": seeds, "results": results},
               args.report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contact-rbpf", description="Contact-based RBPF experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate ground truth and measurements")
    s.add_argument("scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run one filter")
    e.add_argument("--scenario", required=True)
    e.add_argument("--mode", choices=MODES, default="constrained")
    e.add_argument("--particles", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)
    e.add_argument("--truth-out")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("compare", help="run both filters over several seeds")
    c.add_argument("--scenario", required=True)
    c.add_argument("--seeds", type=int, default=1)
    c.add_argument("--seed", type=int, help="first seed")
    c.add_argument("--particles", type=int)
    c.add_argument("--report", required=True)
    c.add_argument("--plots")
    c.add_argument("--out-dir")
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="compare over a range of one parameter")
    w.add_argument("--scenario", required=True)
    w.add_argument("--param", choices=("noise", "particles"), required=True)
    w.add_argument("--values", type=float, nargs="+", required=True)
    w.add_argument("--seeds", type=int, default=1)
    w.add_argument("--seed", type=int, help="first seed")
    w.add_argument("--report", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seeds", 1) < 1:
        parser.error("--seeds must be >= 1")
    if getattr(args, "particles", None) is not None and args.particles < 1:
        parser.error("--particles must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruthFailure, FilterFailure) as exc:
        kind = "simulation" if isinstance(exc, TruthFailure) else "filter"
        print(f"{kind} solver failure at {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
