"""Tests for the config module."""
from pathlib import Path

import numpy as np
import pytest

from pyslicer.cascade import NoiseSpec, SeedPolicy
from pyslicer.config import DEFAULTS, ExperimentConfig, parse_lines, stable_hash
from pyslicer.exceptions import ConfigError, ObservationError
from pyslicer.graph import Uniform
from pyslicer.learner import LearnerMode

from tests.conftest import fixture_path, load_fixture


def test_parse_lines():
    """Comments and blank lines are skipped, whitespace trimmed."""
    text = "# header\n\ngraph.n = 20  # inline\nlearn.mode=simple\n"
    assert parse_lines(text) == {"graph.n": "20", "learn.mode": "simple"}
    with pytest.raises(ConfigError, match="cfg:2"):
        parse_lines("graph.n = 3\nnot a setting\n", "cfg")
    with pytest.raises(ConfigError):
        parse_lines("= 3\n")


def test_defaults():
    """An empty config is the default experiment."""
    config = ExperimentConfig()
    assert config.values == DEFAULTS
    assert config.graph.kind == "er"
    assert config.cascades == 1000
    assert config.horizon == 5
    assert config.distribution == Uniform(0.0, 1.0)
    assert config.seed_policy == SeedPolicy("uniform_random")
    assert config.noise is None
    assert config.drop_intervals is False
    assert config.output == Path("results")


def test_load_fixture_file():
    """The fixture file overrides defaults."""
    config = ExperimentConfig.load(fixture_path("experiment.cfg"))
    assert config.graph.n == 20
    assert config.graph.avg_degree == 2.0
    assert config.horizon == 4
    assert config.seed_policy.kind == "round_robin"
    assert config.sweep_cascades == (20, 60)
    assert config.sweep_hidden == (0.0, 0.5)
    assert config.networks == 1
    assert config.draws == 2
    assert config.seed == 3
    assert config.values == {**DEFAULTS, **parse_lines(load_fixture("experiment.cfg"))}


def test_overrides_win():
    """Overrides replace file values."""
    config = ExperimentConfig.load(fixture_path("experiment.cfg"), {"run.seed": "9"})
    assert config.seed == 9
    assert config.with_overrides({"sim.horizon": "6"}).horizon == 6
    assert config.horizon == 4


def test_hash_is_stable():
    """The digest depends on the values only."""
    first = ExperimentConfig({"graph.n": "20", "run.seed": "1"})
    second = ExperimentConfig({"run.seed": "1", "graph.n": "20"})
    assert first.hash == second.hash
    assert len(first.hash) == 12
    assert first.hash != first.with_overrides({"run.seed": "2"}).hash
    assert stable_hash("abc") == "a9993e364706"


def test_write_roundtrip(tmp_path):
    """Written configs load back identical."""
    config = ExperimentConfig({"graph.type": "tree", "graph.degree": "2", "graph.n": "7"})
    path = tmp_path / "run.cfg"
    config.write(path)
    loaded = ExperimentConfig.load(path)
    assert loaded.values == config.values
    assert loaded.hash == config.hash


def test_invalid_configs():
    """Unknown keys and bad values are ConfigErrors."""
    bad = [
        {"graph.colour": "red"},
        {"graph.type": "hypercube"},
        {"graph.type": "file", "graph.path": "/does/not/exist.tsv"},
        {"graph.superset": "diagonals"},
        {"graph.superset": "fake:x"},
        {"graph.n": "many"},
        {"params.dist": "beta:1,1"},
        {"obs.hidden": "1.5"},
        {"obs.noise": "0.5,0.5"},
        {"learn.mode": "noisy"},
        {"learn.drop_intervals": "maybe"},
        {"sim.cascades": "0"},
        {"sweep.cascades": ""},
        {"sweep.hidden": "0,2"},
        {"sweep.draws": "0"},
    ]
    for values in bad:
        with pytest.raises(ConfigError):
            ExperimentConfig(values)
    with pytest.raises(ConfigError):
        ExperimentConfig.load("/does/not/exist.cfg")


def test_graph_spec_describe():
    """Only the generator's own parameters are reported."""
    spec = ExperimentConfig({"graph.type": "ba", "graph.m": "2"}).graph
    assert spec.describe() == {"generator": "ba", "n": 100, "m": 2.0}
    assert ExperimentConfig({"graph.type": "karate"}).graph.describe() == {"generator": "karate"}


def test_learner_factory():
    """learn.* keys map onto the learner settings."""
    config = ExperimentConfig(
        {
            "learn.mode": "noisy",
            "obs.noise": "0.2,0.6,0.2",
            "learn.rate": "0.5",
            "learn.max_iter": "10",
            "learn.prune": "0",
        }
    )
    learner = config.learner(threads=3)
    assert learner.mode is LearnerMode.NOISY
    assert learner.noise == NoiseSpec((0.2, 0.6, 0.2))
    assert learner.learning_rate == 0.5
    assert learner.max_iterations == 10
    assert learner.prune_threshold is None
    assert learner.threads == 3
    assert ExperimentConfig({"obs.noise": "0.2,0.6,0.2"}).learner().noise is None


def test_time_grid_and_observation(rng):
    """Explicit, random and full observation grids."""
    assert ExperimentConfig().time_grid(rng) is None
    assert ExperimentConfig({"obs.times": "0,2,5"}).time_grid(rng) == (0, 2, 5)
    grid = ExperimentConfig({"sim.horizon": "6", "obs.times": "random:0.4"}).time_grid(rng)
    assert grid[0] == 0 and grid[-1] == 6
    assert len(grid) == 5

    model = ExperimentConfig({"obs.hidden": "0.25"}).observation(20, rng)
    assert len(model.hidden) == 5
    assert model.hidden_fraction == 0.25
    assert len(ExperimentConfig().observation(20, rng, hidden_fraction=0.5).hidden) == 10
    with pytest.raises(ObservationError):
        ExperimentConfig({"obs.times": "1,5"}).observation(20, np.random.default_rng(0))
