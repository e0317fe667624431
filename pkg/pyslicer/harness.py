"""
pyslicer.harness
~~~~~~~~~~~~~~~~~~~~
Experiment pipeline, parameter sweeps and named recipes
Licensed under the MIT license.
"""
from __future__ import annotations

import asyncio
from dataclasses import dataclass
import logging
import os
from pathlib import Path
import time
from typing import Any

import numpy as np
import pandas as pd

from .cascade import CascadeSet, SufficientStats, aggregate_statistics, observe_set, simulate_set
from .config import ExperimentConfig
from .constants import THREADS_ENV
from .exceptions import ConfigError, DataFormatError
from .graph import (
    CandidateEdgeSet,
    EdgeParams,
    Graph,
    gen_barabasi_albert,
    gen_erdos_renyi,
    gen_karate_club,
    gen_lattice_with_diagonals,
    gen_random_regular,
    gen_regular_tree,
    read_edge_list,
    sample_params,
    superset_complete,
    superset_with_fake_edges,
)
from .learner import LearnResult, fit, write_learned, write_trace
from .metrics import EvalReport, evaluate, write_report, write_scatter

_LOGGER = logging.getLogger(__name__)

# Stream tags keep the random draws of different stages independent
NETWORK_STREAM = 1
PARAMS_STREAM = 2
CASCADE_STREAM = 3
OBSERVATION_STREAM = 4

RESULT_COLUMNS = [
    "network",
    "draw",
    "cascades",
    "hidden",
    "l1",
    "signed",
    "auc",
    "runtime",
    "iterations",
    "converged",
]

NOISE_EQ = "0.2,0.6,0.2"

RECIPES: dict[str, dict[str, str]] = {
    "heatmap": {
        "graph.type": "er",
        "graph.n": "100",
        "graph.avg_degree": "3",
        "params.dist": "uniform:0,1",
        "sim.horizon": "5",
        "sweep.cascades": "10,100,1000,10000",
        "sweep.hidden": "0,0.25,0.5,0.75",
        "sweep.networks": "5",
        "sweep.draws": "5",
    },
    "lattice": {
        "graph.type": "lattice-diag",
        "graph.side": "10",
        "graph.superset": "diagonals",
        "params.dist": "uniform:0,1",
        "sim.horizon": "5",
        "sim.cascades": "100000",
        "obs.hidden": "0.25",
    },
    "simple": {
        "graph.type": "er",
        "graph.n": "100",
        "graph.avg_degree": "3",
        "graph.superset": "none",
        "params.dist": "constant:0.5",
        "sim.horizon": "5",
        "sim.cascades": "10",
        "obs.hidden": "0.5",
        "learn.mode": "simple",
    },
    "missing": {
        "graph.type": "er",
        "graph.n": "100",
        "graph.avg_degree": "3",
        "params.dist": "uniform:0,1",
        "sim.horizon": "6",
        "sim.cascades": "100000",
        "obs.times": "0,6",
        "learn.mode": "missing",
    },
    "noisy": {
        "graph.type": "er",
        "graph.n": "100",
        "graph.avg_degree": "3",
        "params.dist": "uniform:0,1",
        "sim.horizon": "5",
        "sim.cascades": "100000",
        "obs.hidden": "0.1",
        "obs.noise": NOISE_EQ,
        "learn.mode": "noisy",
    },
    "zachary": {
        "graph.type": "karate",
        "graph.superset": "complete",
        "params.dist": "constant:0.5",
        "sim.horizon": "5",
        "sim.cascades": "1000",
        "obs.hidden": "0.1",
        "obs.noise": NOISE_EQ,
        "learn.mode": "noisy",
    },
    "facebook": {
        "graph.type": "file",
        "graph.superset": "fake:1",
        "params.dist": "constant:0.5",
        "sim.horizon": "5",
        "sim.cascades": "10000",
        "obs.hidden": "0.1",
        "obs.noise": NOISE_EQ,
        "learn.mode": "noisy",
    },
}

SWEEP_RECIPES = ("heatmap",)


def stream(config: ExperimentConfig, tag: int, *parts: int) -> np.random.Generator:
    """Independent generator for one stage of one replicate."""
    return np.random.default_rng([config.seed, tag, *parts])


def stream_seed(config: ExperimentConfig, tag: int, *parts: int) -> int:
    """Integer seed for functions that derive their own chunk streams."""
    return int(stream(config, tag, *parts).integers(2**31))


def thread_count() -> int:
    """Return the worker count from the environment."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        return os.cpu_count() or 1
    try:
        return max(1, int(value))
    except ValueError as err:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from err


def build_network(config: ExperimentConfig, replicate: int = 0) -> tuple[Graph, CandidateEdgeSet]:
    """Build the true graph and the candidate set of one network replicate."""
    spec = config.graph
    rng = stream(config, NETWORK_STREAM, replicate)
    candidates: CandidateEdgeSet | None = None
    if spec.kind == "er":
        truth = gen_erdos_renyi(spec.n, spec.avg_degree, rng)
    elif spec.kind == "rr":
        truth = gen_random_regular(spec.n, spec.degree, rng)
    elif spec.kind == "tree":
        truth = gen_regular_tree(spec.degree, spec.n, rng)
    elif spec.kind == "ba":
        truth = gen_barabasi_albert(spec.n, spec.m, rng)
    elif spec.kind == "lattice-diag":
        truth, diagonals = gen_lattice_with_diagonals(spec.side, rng)
        if spec.superset == "diagonals":
            candidates = diagonals
    elif spec.kind == "karate":
        truth = gen_karate_club()
    else:
        truth = read_edge_list(spec.path).graph()

    if candidates is None:
        if spec.superset == "complete":
            candidates = superset_complete(truth)
        elif spec.superset.startswith("fake:"):
            candidates = superset_with_fake_edges(truth, float(spec.superset[5:]), rng)
        else:
            candidates = CandidateEdgeSet.from_graph(truth)
    _LOGGER.debug(
        "Network %s (%s): %s nodes, %s edges, %s candidates",
        replicate,
        spec.kind,
        truth.n,
        truth.num_edges,
        len(candidates),
    )
    return truth, candidates


def draw_params(
    config: ExperimentConfig, truth: Graph, network: int = 0, draw: int = 0
) -> EdgeParams:
    """Draw the true transmission probabilities of one replicate."""
    return sample_params(truth, config.distribution, stream(config, PARAMS_STREAM, network, draw))


def simulate_observed(
    config: ExperimentConfig,
    truth: Graph,
    params: EdgeParams,
    cascades: int,
    hidden_fraction: float,
    network: int = 0,
    draw: int = 0,
    threads: int = 1,
) -> CascadeSet:
    """Simulate and corrupt cascades; smaller ``cascades`` give prefixes."""
    clean = simulate_set(
        truth,
        params,
        cascades,
        config.horizon,
        config.seed_policy,
        stream_seed(config, CASCADE_STREAM, network, draw),
        threads,
    )
    hidden_key = int(round(hidden_fraction * 1e6))
    model = config.observation(
        truth.n, stream(config, OBSERVATION_STREAM, network, draw, hidden_key), hidden_fraction
    )
    return observe_set(
        clean, model, stream_seed(config, OBSERVATION_STREAM, network, draw, hidden_key, 1)
    )


def learn_and_score(
    config: ExperimentConfig,
    candidates: CandidateEdgeSet,
    params: EdgeParams,
    observed: CascadeSet,
    threads: int = 1,
) -> tuple[LearnResult, EvalReport, SufficientStats]:
    """Aggregate, fit and evaluate."""
    stats = aggregate_statistics(observed, drop_intervals=config.drop_intervals)
    learner = config.learner(threads)
    result = fit(candidates, stats, learner)
    threshold = learner.prune_threshold or 0.0
    report = evaluate(result.params, params, candidates, threshold)
    return result, report, stats


def run_cell(
    config: ExperimentConfig,
    network: int,
    draw: int,
    cascades: int,
    hidden_fraction: float,
) -> dict[str, Any]:
    """Run one point of a sweep and return its result row."""
    started = time.perf_counter()
    truth, candidates = build_network(config, network)
    params = draw_params(config, truth, network, draw)
    observed = simulate_observed(config, truth, params, cascades, hidden_fraction, network, draw)
    result, report, _ = learn_and_score(config, candidates, params, observed)
    return {
        "network": network,
        "draw": draw,
        "cascades": cascades,
        "hidden": hidden_fraction,
        "l1": report.mean_l1,
        "signed": report.mean_signed,
        "auc": report.auc,
        "runtime": time.perf_counter() - started,
        "iterations": result.iterations,
        "converged": int(result.converged),
    }


@dataclass(frozen=True)
class SweepCell:
    """Coordinates of one sweep point."""

    network: int
    draw: int
    cascades: int
    hidden: float

    @property
    def filename(self) -> str:
        """Return the per-cell result file name."""
        return f"cell_n{self.network}_d{self.draw}_m{self.cascades}_x{self.hidden!r}.csv"


def sweep_cells(config: ExperimentConfig) -> list[SweepCell]:
    """Enumerate every (network, draw, M, xi) point in a fixed order."""
    return [
        SweepCell(network, draw, cascades, hidden)
        for network in range(config.networks)
        for draw in range(config.draws)
        for hidden in config.sweep_hidden
        for cascades in config.sweep_cascades
    ]


def header_line(config: ExperimentConfig) -> str:
    """Return the comment line that tags every output file."""
    return f"# config={config.hash} seed={config.seed}\n"


def write_frame(path: Path, frame: pd.DataFrame, config: ExperimentConfig) -> None:
    """Write a CSV under the config header."""
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(header_line(config))
            frame.to_csv(handle, index=False, float_format="%.17g")
    except OSError as err:
        _LOGGER.error("Error writing results %s. %s", path, err)
        raise DataFormatError(f"Cannot write {path}") from err


def read_frame(path: Path) -> pd.DataFrame:
    """Read a CSV written by write_frame."""
    try:
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, ValueError) as err:
        _LOGGER.error("Error reading results %s. %s", path, err)
        raise DataFormatError(f"Cannot read {path}") from err


def _run_cell_to_file(config: ExperimentConfig, cell: SweepCell, path: Path) -> None:
    row = run_cell(config, cell.network, cell.draw, cell.cascades, cell.hidden)
    partial = path.with_suffix(".tmp")
    write_frame(partial, pd.DataFrame([row], columns=RESULT_COLUMNS), config)
    partial.replace(path)


async def run_sweep(config: ExperimentConfig, threads: int | None = None) -> pd.DataFrame:
    """Run every cell not already on disk, then merge all cells.

    Cells are written to ``<output>/cells/<config hash>`` as they finish,
    so an interrupted sweep resumes where it stopped and a changed config
    starts over.
    """
    threads = threads or thread_count()
    cell_dir = config.output / "cells" / config.hash
    cell_dir.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(config)
    pending = [cell for cell in cells if not (cell_dir / cell.filename).exists()]
    _LOGGER.info(
        "Sweep %s: %s cells, %s already done, %s workers",
        config.hash,
        len(cells),
        len(cells) - len(pending),
        threads,
    )
    semaphore = asyncio.Semaphore(threads)

    async def worker(cell: SweepCell) -> None:
        async with semaphore:
            await asyncio.to_thread(_run_cell_to_file, config, cell, cell_dir / cell.filename)
            _LOGGER.debug("Finished %s", cell)

    await asyncio.gather(*(worker(cell) for cell in pending))

    results = pd.concat(
        [read_frame(cell_dir / cell.filename) for cell in cells], ignore_index=True
    )[RESULT_COLUMNS]
    write_frame(config.output / "results.csv", results, config)
    write_frame(config.output / "heatmap.csv", heatmap(results).reset_index(), config)
    return results


def heatmap(results: pd.DataFrame, value: str = "l1") -> pd.DataFrame:
    """Mean ``value`` with xi as rows and M as columns."""
    return results.pivot_table(index="hidden", columns="cascades", values=value, aggfunc="mean")


def run_experiment(config: ExperimentConfig, threads: int = 1) -> EvalReport:
    """Run one cell with ``sim.cascades`` and ``obs.hidden``, writing all artifacts."""
    output = config.output
    output.mkdir(parents=True, exist_ok=True)
    truth, candidates = build_network(config)
    params = draw_params(config, truth)
    observed = simulate_observed(
        config, truth, params, config.cascades, config.hidden_fraction, threads=threads
    )
    result, report, stats = learn_and_score(config, candidates, params, observed, threads)
    meta = {"config": config.hash, "seed": config.seed}
    write_learned(output / "learned.tsv", result, candidates, meta)
    write_trace(output / "trace.csv", result, meta)
    write_report(output / "report.csv", report, meta)
    write_scatter(output / "scatter.csv", result.params, params, meta)
    _LOGGER.info(
        "Experiment %s: %s classes, l1=%.4f signed=%.4f auc=%.4f",
        config.hash,
        stats.num_classes,
        report.mean_l1,
        report.mean_signed,
        report.auc,
    )
    return report


def recipe_config(name: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Return the configuration of a named recipe."""
    if name not in RECIPES:
        raise ConfigError(f"Unknown recipe {name!r}, expected one of {sorted(RECIPES)}")
    return ExperimentConfig({**RECIPES[name], **(overrides or {})})


def run_recipe(
    name: str, overrides: dict[str, str] | None = None, threads: int | None = None
) -> pd.DataFrame | EvalReport:
    """Run a named recipe: a sweep for heatmap, a single experiment otherwise."""
    config = recipe_config(name, overrides)
    if name in SWEEP_RECIPES:
        return asyncio.run(run_sweep(config, threads))
    return run_experiment(config, threads or 1)
