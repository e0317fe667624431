"""Tests for the dmp module."""
import numpy as np
import pandas as pd
import pytest

from pyslicer.cascade import Exact, Hidden, Interval, Star
from pyslicer.dmp import (
    DmpBatch,
    InitialCondition,
    KernelCounters,
    activation_marginal,
    directed_alphas,
    dmp_forward,
    dmp_forward_batch,
    dmp_forward_fast,
    exact_marginals_bruteforce,
    excluded_product,
    monte_carlo_marginals,
    write_marginals,
)
from pyslicer.exceptions import BudgetExceededError, ObservationError, SimulationError
from pyslicer.graph import EdgeParams, build_graph, gen_erdos_renyi, gen_regular_tree


def test_path_marginals(path_graph):
    """Closed-form marginals on a path seeded at one end."""
    params = EdgeParams(path_graph.edges, np.array([0.4, 0.7]))
    run = dmp_forward(path_graph, params, InitialCondition.single_seed(3, 0), 3)
    np.testing.assert_allclose(run.marginals[:, 0], [1, 1, 1, 1])
    np.testing.assert_allclose(run.marginals[:, 1], [0, 0.4, 0.4, 0.4])
    np.testing.assert_allclose(run.marginals[:, 2], [0, 0, 0.28, 0.28])
    np.testing.assert_allclose(run.message(0, 1), [1, 1, 1, 1])
    np.testing.assert_allclose(run.message(1, 0), [0, 0, 0, 0])
    np.testing.assert_allclose(run.message(1, 2), [0, 0.4, 0.4, 0.4])
    with pytest.raises(SimulationError):
        run.message(0, 2)


def test_tree_matches_bruteforce(star_tree, star_params):
    """DMP is exact on trees."""
    for seed in range(star_tree.n):
        run = dmp_forward_fast(star_tree, star_params, InitialCondition.single_seed(5, seed), 4)
        exact = exact_marginals_bruteforce(star_tree, star_params, seed, 4)
        np.testing.assert_allclose(run.marginals, exact, atol=1e-12)


def test_random_trees_match_bruteforce(rng):
    """Exactness on shuffled trees with random parameters."""
    for _ in range(5):
        tree = gen_regular_tree(3, 8, rng)
        params = EdgeParams(tree.edges, rng.uniform(0.05, 0.95, tree.num_edges))
        seed = int(rng.integers(tree.n))
        run = dmp_forward(tree, params, InitialCondition.single_seed(tree.n, seed), 5)
        exact = exact_marginals_bruteforce(tree, params, seed, 5)
        assert np.abs(run.marginals - exact).max() < 1e-10


def test_loopy_graph_is_upper_bound(triangle):
    """On a loop DMP over-counts paths and never underestimates."""
    params = EdgeParams(triangle.edges, np.array([0.6, 0.5, 0.7, 0.4]))
    run = dmp_forward(triangle, params, InitialCondition.single_seed(4, 3), 4)
    exact = exact_marginals_bruteforce(triangle, params, 3, 4)
    assert (run.marginals >= exact - 1e-12).all()
    assert run.marginals[4, 0] == pytest.approx(1 - 0.8 * (1 - 0.6 * 0.7 * 0.4))
    assert exact[4, 0] == pytest.approx(0.4 * (1 - 0.5 * (1 - 0.7 * 0.6)))


def test_fast_matches_direct(rng):
    """The division form reproduces the cavity products."""
    for _ in range(10):
        graph = gen_erdos_renyi(12, 3.0, rng)
        params = EdgeParams(graph.edges, rng.uniform(0.05, 0.95, graph.num_edges))
        init = InitialCondition.single_seed(12, int(rng.integers(12)))
        direct = dmp_forward(graph, params, init, 5)
        fast = dmp_forward_fast(graph, params, init, 5)
        np.testing.assert_allclose(fast.marginals, direct.marginals, atol=1e-12)
        np.testing.assert_allclose(fast.messages, direct.messages, atol=1e-12)


def test_guard_fallback_with_certain_edges(path_graph):
    """Alpha = 1 zeroes a factor; the fallback keeps messages exact."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    init = InitialCondition.single_seed(3, 0)
    counters = KernelCounters()
    fast = dmp_forward_fast(path_graph, params, init, 3, counters)
    direct = dmp_forward(path_graph, params, init, 3)
    np.testing.assert_array_equal(fast.messages, direct.messages)
    np.testing.assert_allclose(fast.marginals[:, 2], [0, 0, 1, 1])
    assert counters.fallbacks > 0
    assert counters.message_updates == 3 * 1 * 4
    counters.reset()
    assert counters.fallbacks == 0 and counters.message_updates == 0


def test_excluded_product(triangle):
    """Product over incoming factors without the skipped edges."""
    directed = triangle.directed
    factors = np.linspace(0.5, 0.9, directed.count)
    incoming = directed.incoming[2]
    assert excluded_product(directed, factors, 2) == pytest.approx(np.prod(factors[incoming]))
    assert excluded_product(directed, factors, 2, incoming[0]) == pytest.approx(
        np.prod(factors[incoming[1:]])
    )


def test_batch_matches_single_runs(rng):
    """Rows of a batch are independent initial conditions."""
    graph = gen_erdos_renyi(15, 3.0, rng)
    params = EdgeParams(graph.edges, rng.uniform(0.1, 0.9, graph.num_edges))
    directed, alpha_dir = directed_alphas(graph, params)
    pbar = np.zeros((3, 15))
    pbar[0, 2] = pbar[1, 7] = 1.0
    pbar[2] = 0.1
    batch = dmp_forward_batch(directed, alpha_dir, pbar, 4)
    assert len(batch) == 3
    for row in range(3):
        single = dmp_forward_fast(graph, params, InitialCondition(pbar[row]), 4)
        np.testing.assert_allclose(batch.run(row).marginals, single.marginals, atol=1e-14)
    ext = batch.extended_marginals()
    assert ext.shape == (4 + 3, 3, 15)
    assert (ext[0] == 0).all() and (ext[-1] == 1).all()
    assert (np.diff(batch.marginals, axis=0) >= -1e-15).all()


def test_directed_alphas_validation(path_graph):
    """Parameter vectors must match the edge count."""
    directed, alpha_dir = directed_alphas(path_graph, np.array([0.2, 0.3]))
    assert directed.count == 4
    np.testing.assert_array_equal(alpha_dir, [0.2, 0.2, 0.3, 0.3])
    with pytest.raises(SimulationError):
        directed_alphas(path_graph, np.array([0.2]))


def test_initial_condition():
    """Single seeds are keyed by node id."""
    assert InitialCondition.single_seed(4, 2).key == 2
    assert InitialCondition(np.array([0.5, 0.0])).key == (0.5, 0.0)
    with pytest.raises(SimulationError):
        InitialCondition.single_seed(4, 4)
    with pytest.raises(SimulationError):
        InitialCondition(np.array([1.5, 0.0]))
    with pytest.raises(SimulationError):
        dmp_forward(
            build_graph(3, [(0, 1)]), np.array([0.5]), InitialCondition.single_seed(2, 0), 2
        )


def test_activation_marginal(path_graph):
    """Outcome probabilities from marginal differences."""
    params = EdgeParams(path_graph.edges, np.array([0.4, 0.7]))
    run = dmp_forward(path_graph, params, InitialCondition.single_seed(3, 0), 3)
    assert activation_marginal(run, 2, Exact(2)) == pytest.approx(0.28)
    assert activation_marginal(run, 2, Exact(1)) == pytest.approx(0.0)
    assert activation_marginal(run, 2, Star()) == pytest.approx(0.72)
    assert activation_marginal(run, 2, Interval(0, 3)) == pytest.approx(0.28)
    assert activation_marginal(run, 1, Interval(1, 4)) == pytest.approx(0.6)
    assert activation_marginal(run, 0, Exact(0)) == pytest.approx(1.0)
    with pytest.raises(ObservationError):
        activation_marginal(run, 0, Hidden())


def test_bruteforce_budget(rng):
    """Enumeration refuses graphs above the edge budget."""
    graph = gen_erdos_renyi(10, 3.0, rng)
    params = EdgeParams.constant(graph.edges, 0.5)
    with pytest.raises(BudgetExceededError):
        exact_marginals_bruteforce(graph, params, 0, 3)


def test_monte_carlo_agrees_with_exact(star_tree, star_params, rng):
    """Simulation frequencies are within a few standard errors of the truth."""
    estimate = monte_carlo_marginals(star_tree, star_params, 0, 3, 20000, rng, block=3000)
    exact = exact_marginals_bruteforce(star_tree, star_params, 0, 3)
    assert estimate.samples == 20000
    assert (np.abs(estimate.marginals - exact) <= 5 * estimate.stderr + 1e-3).all()
    with pytest.raises(SimulationError):
        monte_carlo_marginals(star_tree, star_params, 0, 3, 0, rng)


def test_write_marginals(tmp_path, path_graph):
    """One row per class, node and time."""
    directed, alpha_dir = directed_alphas(path_graph, np.array([0.4, 0.7]))
    batch: DmpBatch = dmp_forward_batch(directed, alpha_dir, np.eye(3)[[0, 2]], 2)
    path = tmp_path / "marginals.csv"
    write_marginals(path, batch, ["a", "b"])
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["class", "node", "t", "p"]
    assert len(frame) == 2 * 3 * 3
    row = frame[(frame["class"] == "a") & (frame["node"] == 2) & (frame["t"] == 2)]
    assert row["p"].iloc[0] == pytest.approx(0.28)
