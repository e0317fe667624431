"""
pyslicer.cli
~~~~~~~~~~~~~~~~~~~~
Command line front end
Licensed under the MIT license.
"""
from __future__ import annotations

import argparse
import asyncio
import logging
from pathlib import Path
import sys
from typing import Callable, Sequence

from .cascade import ObservationModel, aggregate_statistics, read_cascades, write_cascades
from .checks import run_checks
from .config import ExperimentConfig
from .constants import DEFAULT_PRUNE_THRESHOLD, NO_OBSERVATION, __version__
from .exceptions import BaseSlicerError, ConfigError, DataFormatError
from .graph import CandidateEdgeSet, read_edge_list, write_edge_list
from .harness import (
    PARAMS_STREAM,
    RECIPES,
    SWEEP_RECIPES,
    build_network,
    draw_params,
    heatmap,
    recipe_config,
    run_experiment,
    run_sweep,
    simulate_observed,
    thread_count,
)
from .learner import LearnerMode, fit, write_learned, write_trace
from .metrics import evaluate, write_report, write_scatter

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3

# Flags that map onto configuration keys; only flags given on the command line override
FLAG_KEYS = {
    "type": "graph.type",
    "n": "graph.n",
    "avg_degree": "graph.avg_degree",
    "degree": "graph.degree",
    "m": "graph.m",
    "side": "graph.side",
    "path": "graph.path",
    "superset_kind": "graph.superset",
    "dist": "params.dist",
    "cascades": "sim.cascades",
    "horizon": "sim.horizon",
    "seed_policy": "sim.seed_policy",
    "hidden": "obs.hidden",
    "times": "obs.times",
    "noise": "obs.noise",
    "mode": "learn.mode",
    "rate": "learn.rate",
    "max_iter": "learn.max_iter",
    "tol": "learn.tol",
    "prune": "learn.prune",
    "drop_intervals": "learn.drop_intervals",
    "seed": "run.seed",
    "output": "run.output",
}


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    values: dict[str, str] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None or value is False:
            continue
        values[key] = "true" if value is True else str(value)
    return values


def load_config(
    args: argparse.Namespace, base: dict[str, str] | None = None
) -> ExperimentConfig:
    """Build the configuration from ``--config``, ``--set`` and flags.

    ``base`` holds values taken from input files; explicit options win.
    """
    overrides = {**(base or {}), **_overrides(args)}
    if getattr(args, "recipe", None):
        preset = recipe_config(args.recipe).values
        return ExperimentConfig.load(args.config, {**preset, **overrides})
    return ExperimentConfig.load(args.config, overrides)


def _meta(config: ExperimentConfig, **extra: object) -> dict[str, object]:
    return {"config": config.hash, "seed": config.seed, **extra}


def cmd_graph(args: argparse.Namespace) -> int:
    """Generate a graph and, if requested, its candidate super-set."""
    inherited: dict[str, str] = {}
    if args.superset_out and args.type == "lattice-diag" and args.superset_kind is None:
        inherited["graph.superset"] = "diagonals"
    config = load_config(args, inherited)
    truth, candidates = build_network(config)
    meta = _meta(config, **config.graph.describe())
    write_edge_list(args.out, truth.n, truth.edges, metadata=meta)
    if args.superset_out:
        write_edge_list(
            args.superset_out,
            candidates.n,
            candidates.edges,
            truth_mask=candidates.truth_mask,
            metadata={**meta, "fake_fraction": repr(candidates.fake_fraction)},
        )
    _LOGGER.info("Wrote %s edges to %s", truth.num_edges, args.out)
    return EXIT_OK


def cmd_params(args: argparse.Namespace) -> int:
    """Draw ground-truth alphas for an edge-list file."""
    config = load_config(args)
    graph = read_edge_list(args.graph).graph()
    params = draw_params(config, graph)
    write_edge_list(
        args.out,
        graph.n,
        graph.edges,
        params,
        metadata=_meta(config, dist=config.values["params.dist"], stream=PARAMS_STREAM),
    )
    _LOGGER.info("Wrote parameters of %s edges to %s", graph.num_edges, args.out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Simulate cascades on a parameterised graph and corrupt them."""
    config = load_config(args)
    source = read_edge_list(args.graph)
    params = source.params()
    if params is None:
        raise DataFormatError(f"{args.graph} carries no alpha column")
    graph = source.graph()
    observed = simulate_observed(
        config, graph, params, config.cascades, config.hidden_fraction, threads=args.threads
    )
    write_cascades(args.out, observed, _meta(config))
    _LOGGER.info("Wrote %s cascades to %s", len(observed), args.out)
    return EXIT_OK


def _learning_candidates(args: argparse.Namespace, n: int) -> CandidateEdgeSet:
    source = read_edge_list(args.superset or args.graph)
    candidates = source.candidates()
    if candidates.n != n:
        raise DataFormatError(f"Candidate file has {candidates.n} nodes, cascades have {n}")
    return candidates


def cmd_learn(args: argparse.Namespace) -> int:
    """Learn alphas from a cascade file."""
    if not (args.graph or args.superset):
        raise ConfigError("learn needs --graph or --superset")
    observed = read_cascades(args.data)
    inherited: dict[str, str] = {}
    descriptor = observed.metadata.get("observation", NO_OBSERVATION)
    if args.noise is None and descriptor != NO_OBSERVATION:
        noise = ObservationModel.from_descriptor(descriptor).noise
        if noise is not None:
            inherited["obs.noise"] = noise.describe()
    config = load_config(args, inherited)
    learner = config.learner(args.threads)
    stats = aggregate_statistics(observed, drop_intervals=config.drop_intervals)
    candidates = _learning_candidates(args, stats.n)
    result = fit(candidates, stats, learner)
    meta = _meta(config, mode=learner.mode.value)
    write_learned(args.out, result, candidates, meta)
    if args.trace:
        write_trace(args.trace, result, meta)
    if result.shared_alpha is not None:
        print(f"alpha = {result.shared_alpha:.6f}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_eval(args: argparse.Namespace) -> int:
    """Compare learned alphas with the truth."""
    learned_file = read_edge_list(args.learned)
    learned = learned_file.params()
    truth = read_edge_list(args.truth).params()
    if learned is None or truth is None:
        raise DataFormatError("Both --learned and --truth need an alpha column")
    if args.superset:
        candidates = read_edge_list(args.superset).candidates()
    elif learned_file.truth_flags:
        candidates = learned_file.candidates()
    else:
        candidates = None
    threshold = DEFAULT_PRUNE_THRESHOLD if args.prune is None else args.prune
    report = evaluate(learned, truth, candidates, threshold)
    meta = _meta(load_config(args))
    write_report(args.out, report, meta)
    if args.scatter:
        write_scatter(args.scatter, learned, truth, meta)
    print(report.to_frame().to_string(index=False))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run a parameter sweep or a single-point recipe."""
    config = load_config(args)
    threads = args.threads or thread_count()
    if args.recipe and args.recipe not in SWEEP_RECIPES:
        report = run_experiment(config, threads)
        print(report.to_frame().to_string(index=False))
        return EXIT_OK
    results = asyncio.run(run_sweep(config, threads))
    print(heatmap(results).to_string())
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    """Run the numerical self-checks."""
    results = run_checks(args.seed or 0, args.only)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name:20s} {result.value:.3e} < {result.threshold:.0e} {status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_ERROR


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config key"
    )
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        prog="pyslicer",
        description="Learn Independent Cascade parameters with dynamic message passing",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    graph = sub.add_parser("graph", help="generate a graph")
    _common(graph)
    graph.add_argument("--type", help="er, rr, tree, ba, lattice-diag, karate or file")
    graph.add_argument("--n", type=int)
    graph.add_argument("--avg-degree", type=float)
    graph.add_argument("--degree", type=int, help="degree (rr) or branching (tree)")
    graph.add_argument("--m", type=float, help="links per new node (ba)")
    graph.add_argument("--side", type=int)
    graph.add_argument("--path", help="edge-list file for --type file")
    graph.add_argument(
        "--superset", dest="superset_kind", help="none, complete, diagonals or fake:<ratio>"
    )
    graph.add_argument("--out", type=Path, required=True)
    graph.add_argument("--superset-out", type=Path)
    graph.set_defaults(func=cmd_graph)

    params = sub.add_parser("params", help="draw transmission probabilities")
    _common(params)
    params.add_argument("--graph", type=Path, required=True)
    params.add_argument("--dist", help="uniform:a,b or constant:c")
    params.add_argument("--out", type=Path, required=True)
    params.set_defaults(func=cmd_params)

    simulate = sub.add_parser("simulate", help="simulate and corrupt cascades")
    _common(simulate)
    simulate.add_argument("--graph", type=Path, required=True, help="edge list with alphas")
    simulate.add_argument("--cascades", type=int)
    simulate.add_argument("--horizon", type=int)
    simulate.add_argument("--seed-policy")
    simulate.add_argument("--hidden", type=float, help="fraction of hidden nodes")
    simulate.add_argument("--times", help="full, 0,6 or random:<fraction>")
    simulate.add_argument("--noise", help="pi_-K,...,pi_K")
    simulate.add_argument("--threads", type=int, default=1)
    simulate.add_argument("--out", type=Path, required=True)
    simulate.set_defaults(func=cmd_simulate)

    learn = sub.add_parser("learn", help="learn alphas from cascades")
    _common(learn)
    learn.add_argument("--data", type=Path, required=True)
    learn.add_argument("--graph", type=Path)
    learn.add_argument("--superset", type=Path)
    learn.add_argument("--mode", choices=[m.value for m in LearnerMode])
    learn.add_argument("--noise")
    learn.add_argument("--rate", type=float)
    learn.add_argument("--max-iter", type=int)
    learn.add_argument("--tol", type=float)
    learn.add_argument("--prune", type=float, help="0 disables pruning")
    learn.add_argument("--drop-intervals", action="store_true")
    learn.add_argument("--threads", type=int, default=1)
    learn.add_argument("--out", type=Path, required=True)
    learn.add_argument("--trace", type=Path)
    learn.set_defaults(func=cmd_learn)

    ev = sub.add_parser("eval", help="score learned alphas")
    _common(ev)
    ev.add_argument("--learned", type=Path, required=True)
    ev.add_argument("--truth", type=Path, required=True)
    ev.add_argument("--superset", type=Path, help="candidate file with truth flags")
    ev.add_argument("--prune", type=float)
    ev.add_argument("--out", type=Path, required=True)
    ev.add_argument("--scatter", type=Path)
    ev.set_defaults(func=cmd_eval)

    sweep = sub.add_parser("sweep", help="run a sweep or a named recipe")
    _common(sweep)
    sweep.add_argument("--recipe", choices=sorted(RECIPES))
    sweep.add_argument("--output")
    sweep.add_argument("--threads", type=int)
    sweep.set_defaults(func=cmd_sweep)

    check = sub.add_parser("check", help="run oracle and gradient checks")
    _common(check)
    check.add_argument("--only", action="append", help="run only the named check")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``pyslicer`` command."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    _LOGGER.info("Initializing pySlicer Version: %s", __version__)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except BaseSlicerError as err:
        _LOGGER.debug("Command failed", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
