"""
pyslicer.checks
~~~~~~~~~~~~~~~~~~~~
Numerical self-checks: oracles, kernel equivalence and gradients
Licensed under the MIT license.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Callable

import numpy as np

from .cascade import (
    NoiseSpec,
    ObservationModel,
    SeedPolicy,
    SufficientStats,
    aggregate_statistics,
    observe_set,
    simulate_set,
)
from .dmp import (
    InitialCondition,
    dmp_forward,
    dmp_forward_fast,
    exact_marginals_bruteforce,
)
from .graph import EdgeParams, Graph, gen_erdos_renyi, gen_regular_tree
from .learner import (
    LearnerConfig,
    LearnerMode,
    evaluate,
    finite_difference_check,
    stationarity_residuals,
)

_LOGGER = logging.getLogger(__name__)

TREE_TOLERANCE = 1e-10
FAST_TOLERANCE = 1e-12
GRADIENT_TOLERANCE = 1e-4
STATIONARITY_TOLERANCE = 1e-9
REDUCTION_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CheckResult:
    """One named check with its worst observed value."""

    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        """Return if the check stayed below its threshold."""
        return bool(self.value < self.threshold)


def random_tree(rng: np.random.Generator, max_edges: int = 8) -> Graph:
    """Random labelled tree with at most ``max_edges`` edges."""
    n = int(rng.integers(2, max_edges + 2))
    branching = int(rng.integers(2, 5))
    return gen_regular_tree(branching, n, rng)


def random_params(graph: Graph, rng: np.random.Generator, ones: float = 0.0) -> EdgeParams:
    """Uniform alphas, a share ``ones`` of them set to exactly 1."""
    values = rng.uniform(0.05, 0.95, size=graph.num_edges)
    values[rng.random(graph.num_edges) < ones] = 1.0
    return EdgeParams(graph.edges, values)


def synthetic_stats(
    graph: Graph,
    params: EdgeParams,
    horizon: int,
    cascades: int,
    seed: int,
    model: ObservationModel | None = None,
) -> SufficientStats:
    """Simulate, optionally corrupt, and aggregate a small data set."""
    clean = simulate_set(graph, params, cascades, horizon, SeedPolicy("round_robin"), seed)
    observed = clean if model is None else observe_set(clean, model, seed + 1)
    return aggregate_statistics(observed)


def check_tree_exactness(rng: np.random.Generator, instances: int = 20) -> CheckResult:
    """DMP against exhaustive percolation on trees."""
    worst = 0.0
    for _ in range(instances):
        tree = random_tree(rng)
        params = random_params(tree, rng)
        seed = int(rng.integers(tree.n))
        horizon = int(rng.integers(1, 7))
        run = dmp_forward(tree, params, InitialCondition.single_seed(tree.n, seed), horizon)
        exact = exact_marginals_bruteforce(tree, params, seed, horizon)
        worst = max(worst, float(np.abs(run.marginals - exact).max()))
    return CheckResult("tree_exactness", worst, TREE_TOLERANCE)


def check_fast_equivalence(rng: np.random.Generator, instances: int = 50) -> CheckResult:
    """Fast and direct forward passes agree, including alpha = 1 edges."""
    worst = 0.0
    for _ in range(instances):
        graph = gen_erdos_renyi(12, 3.0, rng)
        params = random_params(graph, rng, ones=0.3)
        init = InitialCondition.single_seed(graph.n, int(rng.integers(graph.n)))
        horizon = int(rng.integers(1, 7))
        direct = dmp_forward(graph, params, init, horizon)
        fast = dmp_forward_fast(graph, params, init, horizon)
        worst = max(
            worst,
            float(np.abs(direct.marginals - fast.marginals).max()),
            float(np.abs(direct.messages - fast.messages).max(initial=0.0)),
        )
    return CheckResult("fast_equivalence", worst, FAST_TOLERANCE)


def _mode_setups(graph: Graph, horizon: int) -> list[tuple[LearnerConfig, ObservationModel]]:
    noise = NoiseSpec((0.2, 0.6, 0.2))
    grid = tuple(t for t in range(horizon + 1) if t % 2 == 0 or t == horizon)
    hidden = frozenset({graph.n - 1})
    return [
        (LearnerConfig(mode=LearnerMode.BASE), ObservationModel(hidden)),
        (LearnerConfig(mode=LearnerMode.SIMPLE), ObservationModel(hidden)),
        (LearnerConfig(mode=LearnerMode.MISSING), ObservationModel(hidden, grid)),
        (
            LearnerConfig(mode=LearnerMode.NOISY, noise=noise),
            ObservationModel(hidden, None, noise),
        ),
    ]


def check_gradients(rng: np.random.Generator, instances: int = 2) -> CheckResult:
    """Analytic gradients against central differences in every mode."""
    worst = 0.0
    for k in range(instances):
        tree = gen_regular_tree(3, int(rng.integers(6, 11)), rng)
        params = random_params(tree, rng)
        horizon = 4
        for config, model in _mode_setups(tree, horizon):
            stats = synthetic_stats(tree, params, horizon, 200, 100 + k, model)
            values = params.values
            if config.mode is LearnerMode.SIMPLE:
                values = np.full_like(values, 0.4)
                result = finite_difference_check(tree, stats, values, config)
            else:
                result = finite_difference_check(
                    tree, stats, values, config, int(rng.integers(tree.num_edges))
                )
            _LOGGER.debug("Gradient %s: %s", config.mode.value, result)
            worst = max(worst, result.rel_error)
    return CheckResult("gradients", worst, GRADIENT_TOLERANCE)


def check_stationarity(rng: np.random.Generator, instances: int = 3) -> CheckResult:
    """Computed multipliers zero the Lagrangian derivatives."""
    worst = 0.0
    for k in range(instances):
        graph = gen_erdos_renyi(10, 3.0, rng)
        params = random_params(graph, rng)
        stats = synthetic_stats(graph, params, 5, 300, 200 + k)
        node_res, msg_res = stationarity_residuals(graph, params, stats)
        worst = max(worst, node_res, msg_res)
    return CheckResult("stationarity", worst, STATIONARITY_TOLERANCE)


def check_mode_reductions(rng: np.random.Generator) -> CheckResult:
    """Trivial noise and the full grid reproduce the base objective."""
    graph = gen_erdos_renyi(10, 3.0, rng)
    params = random_params(graph, rng)
    stats = synthetic_stats(graph, params, 5, 300, 300)
    directed, alpha_dir = graph.directed, np.repeat(params.values, 2)
    base = evaluate(directed, alpha_dir, stats, LearnerConfig(mode=LearnerMode.BASE))
    worst = 0.0
    for config in (
        LearnerConfig(mode=LearnerMode.NOISY, noise=NoiseSpec((1.0,))),
        LearnerConfig(mode=LearnerMode.MISSING),
    ):
        value, grad = evaluate(directed, alpha_dir, stats, config)
        worst = max(worst, abs(value - base[0]), float(np.abs(grad - base[1]).max()))
    return CheckResult("mode_reductions", worst, REDUCTION_TOLERANCE)


CHECKS: dict[str, Callable[[np.random.Generator], CheckResult]] = {
    "tree_exactness": check_tree_exactness,
    "fast_equivalence": check_fast_equivalence,
    "gradients": check_gradients,
    "stationarity": check_stationarity,
    "mode_reductions": check_mode_reductions,
}


def run_checks(seed: int = 0, names: list[str] | None = None) -> list[CheckResult]:
    """Run the named checks (all by default), each on its own random stream."""
    results = []
    for index, (name, check) in enumerate(CHECKS.items()):
        if names and name not in names:
            continue
        result = check(np.random.default_rng([seed, index]))
        _LOGGER.info(
            "Check %s: %.3g (threshold %.1g) %s",
            name,
            result.value,
            result.threshold,
            "ok" if result.passed else "FAILED",
        )
        results.append(result)
    return results
