"""Provide common pytest fixtures."""
import pathlib

import numpy as np
import pytest

from pyslicer.graph import EdgeParams, Graph, build_graph


def load_fixture(name: str):
    """Load a fixture."""
    return (pathlib.Path(__file__).parent / "fixtures" / name).read_text()


def fixture_path(name: str) -> pathlib.Path:
    """Return the path of a fixture file."""
    return pathlib.Path(__file__).parent / "fixtures" / name


def pytest_addoption(parser):
    """Register the option enabling experiment-scale runs."""
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(name="rng")
def rng_fixture():
    """Seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture(name="path_graph")
def path_graph_fixture() -> Graph:
    """Path 0 - 1 - 2."""
    return build_graph(3, [(0, 1), (1, 2)])


@pytest.fixture(name="star_tree")
def star_tree_fixture() -> Graph:
    """Tree with a hub, two leaves and a path of length two."""
    return build_graph(5, [(0, 1), (0, 2), (0, 3), (3, 4)])


@pytest.fixture(name="star_params")
def star_params_fixture(star_tree) -> EdgeParams:
    """Distinct alphas on the star tree."""
    return EdgeParams(star_tree.edges, np.array([0.3, 0.6, 0.45, 0.8]))


@pytest.fixture(name="triangle")
def triangle_fixture() -> Graph:
    """Triangle with a pendant node."""
    return build_graph(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
