"""Tests for the experiment harness."""
import numpy as np
import pandas as pd
import pytest

from pyslicer.config import ExperimentConfig
from pyslicer.exceptions import ConfigError
from pyslicer.harness import (
    RECIPES,
    RESULT_COLUMNS,
    SweepCell,
    build_network,
    draw_params,
    header_line,
    heatmap,
    read_frame,
    recipe_config,
    run_cell,
    run_experiment,
    run_sweep,
    simulate_observed,
    stream,
    sweep_cells,
    thread_count,
)

from tests.conftest import fixture_path


@pytest.fixture(name="sweep_config")
def sweep_config_fixture(tmp_path) -> ExperimentConfig:
    """The small fixture sweep writing under tmp_path."""
    return ExperimentConfig.load(
        fixture_path("experiment.cfg"), {"run.output": str(tmp_path / "sweep")}
    )


def test_streams_are_deterministic_and_independent():
    """Same coordinates give the same draws, other tags do not."""
    config = ExperimentConfig({"run.seed": "5"})
    first = stream(config, 1, 0).random(4)
    np.testing.assert_array_equal(first, stream(config, 1, 0).random(4))
    assert not np.array_equal(first, stream(config, 2, 0).random(4))
    assert not np.array_equal(first, stream(config, 1, 1).random(4))


def test_thread_count(monkeypatch):
    """PYSLICER_THREADS sets the worker count."""
    monkeypatch.setenv("PYSLICER_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("PYSLICER_THREADS", "0")
    assert thread_count() == 1
    monkeypatch.setenv("PYSLICER_THREADS", "lots")
    with pytest.raises(ConfigError):
        thread_count()
    monkeypatch.delenv("PYSLICER_THREADS")
    assert thread_count() >= 1


def test_build_network_variants():
    """Generators and candidate supersets."""
    truth, candidates = build_network(
        ExperimentConfig({"graph.n": "40", "graph.superset": "fake:1"})
    )
    assert truth.num_edges == 60
    assert len(candidates) == 120
    assert candidates.truth_edges() == truth.edges

    tree, _ = build_network(
        ExperimentConfig({"graph.type": "tree", "graph.n": "7", "graph.degree": "2"})
    )
    assert tree.num_edges == 6

    lattice, diagonals = build_network(
        ExperimentConfig(
            {"graph.type": "lattice-diag", "graph.side": "4", "graph.superset": "diagonals"}
        )
    )
    assert lattice.num_edges == 24
    assert len(diagonals) == 24 + 9

    karate, complete = build_network(
        ExperimentConfig({"graph.type": "karate", "graph.superset": "complete"})
    )
    assert len(complete) == 34 * 33 // 2
    assert int(complete.truth_mask.sum()) == karate.num_edges

    path = str(fixture_path("tree_params.tsv"))
    from_file, plain = build_network(ExperimentConfig({"graph.type": "file", "graph.path": path}))
    assert from_file.edges == ((0, 1), (0, 2), (0, 3), (3, 4))
    assert plain.truth_mask.all()


def test_build_network_is_reproducible(sweep_config):
    """Replicates are fixed by the seed and their index."""
    first, _ = build_network(sweep_config, 0)
    assert build_network(sweep_config, 0)[0] == first
    assert build_network(sweep_config, 1)[0] != first


def test_draw_params(sweep_config):
    """Parameters follow the configured distribution."""
    truth, _ = build_network(sweep_config)
    params = draw_params(sweep_config, truth, 0, 1)
    assert params.edges == truth.edges
    assert ((params.values >= 0.2) & (params.values <= 0.8)).all()
    np.testing.assert_array_equal(params.values, draw_params(sweep_config, truth, 0, 1).values)
    assert not np.array_equal(params.values, draw_params(sweep_config, truth, 0, 0).values)


def test_simulate_observed_prefixes(sweep_config):
    """Fewer cascades give a prefix of the larger observed set."""
    truth, _ = build_network(sweep_config)
    params = draw_params(sweep_config, truth)
    small = simulate_observed(sweep_config, truth, params, 20, 0.5)
    large = simulate_observed(sweep_config, truth, params, 60, 0.5)
    np.testing.assert_array_equal(large.prefix(20).lo, small.lo)
    np.testing.assert_array_equal(large.prefix(20).hi, small.hi)
    # hidden nodes still report when they seed a cascade
    hidden = (small.lo == -2).any(axis=0)
    assert hidden.sum() == 10


def test_run_cell_row(sweep_config):
    """One sweep point gives one complete, reproducible row."""
    row = run_cell(sweep_config, 0, 0, 20, 0.0)
    assert list(row) == RESULT_COLUMNS
    assert row["cascades"] == 20
    assert 0.0 <= row["l1"] <= 1.0
    assert row["iterations"] <= 40
    again = run_cell(sweep_config, 0, 0, 20, 0.0)
    assert again["l1"] == row["l1"]


def test_sweep_cells(sweep_config):
    """Networks, draws, fractions and counts in a fixed order."""
    cells = sweep_cells(sweep_config)
    assert len(cells) == 1 * 2 * 2 * 2
    assert cells[0] == SweepCell(0, 0, 20, 0.0)
    assert cells[1] == SweepCell(0, 0, 60, 0.0)
    assert cells[-1] == SweepCell(0, 1, 60, 0.5)
    assert cells[0].filename == "cell_n0_d0_m20_x0.0.csv"


async def test_run_sweep_and_resume(sweep_config):
    """All cells are written, and finished cells are not recomputed."""
    results = await run_sweep(sweep_config, threads=2)
    output = sweep_config.output
    assert len(results) == 8
    assert list(results.columns) == RESULT_COLUMNS
    assert (output / "results.csv").read_text().startswith(header_line(sweep_config))
    pd.testing.assert_frame_equal(read_frame(output / "results.csv"), results)

    table = read_frame(output / "heatmap.csv")
    assert table["hidden"].tolist() == [0.0, 0.5]
    assert list(table.columns[1:]) == ["20", "60"]

    cells = sweep_cells(sweep_config)
    kept = output / "cells" / sweep_config.hash / cells[0].filename
    marked = read_frame(kept)
    marked.loc[0, "l1"] = 99.0
    marked.to_csv(kept, index=False)
    removed = output / "cells" / sweep_config.hash / cells[1].filename
    before = read_frame(removed)
    removed.unlink()

    resumed = await run_sweep(sweep_config, threads=1)
    assert resumed.loc[0, "l1"] == 99.0
    assert resumed.loc[1, "l1"] == before.loc[0, "l1"]


async def test_run_sweep_ignores_cells_of_another_config(sweep_config, tmp_path):
    """Reusing an output directory with a changed config recomputes every cell."""
    first = await run_sweep(sweep_config, threads=2)
    changed = {"params.dist": "constant:0.9", "sim.horizon": "5"}
    reused = ExperimentConfig.load(
        fixture_path("experiment.cfg"), {"run.output": str(sweep_config.output), **changed}
    )
    fresh = ExperimentConfig.load(
        fixture_path("experiment.cfg"), {"run.output": str(tmp_path / "fresh"), **changed}
    )
    assert reused.hash != sweep_config.hash
    second = await run_sweep(reused, threads=2)
    pd.testing.assert_frame_equal(second, await run_sweep(fresh, threads=2))
    assert not np.allclose(first["l1"], second["l1"])
    assert (sweep_config.output / "cells" / sweep_config.hash).is_dir()
    assert (sweep_config.output / "cells" / reused.hash).is_dir()
    header = (sweep_config.output / "results.csv").read_text()
    assert header.startswith(header_line(reused))


def test_heatmap_pivot():
    """Means over replicates, xi down and M across."""
    results = pd.DataFrame(
        {
            "hidden": [0.0, 0.0, 0.5, 0.0],
            "cascades": [10, 100, 10, 10],
            "l1": [0.2, 0.1, 0.3, 0.4],
        }
    )
    table = heatmap(results)
    assert table.loc[0.0, 10] == pytest.approx(0.3)
    assert table.loc[0.0, 100] == pytest.approx(0.1)
    assert table.loc[0.5, 10] == pytest.approx(0.3)
    assert np.isnan(table.loc[0.5, 100])


def test_run_experiment_artifacts(tmp_path):
    """A single experiment writes learned parameters, trace, report and scatter."""
    output = tmp_path / "single"
    config = ExperimentConfig.load(
        fixture_path("experiment.cfg"),
        {"run.output": str(output), "sim.cascades": "50", "graph.superset": "fake:0.5"},
    )
    report = run_experiment(config)
    for name in ("learned.tsv", "trace.csv", "report.csv", "scatter.csv"):
        assert (output / name).is_file()
    truth, candidates = build_network(config)
    assert report.truth_edges == truth.num_edges
    assert report.candidate_edges == len(candidates)
    assert 0.0 <= report.auc <= 1.0
    assert "config=" + config.hash in (output / "learned.tsv").read_text()


def test_recipes():
    """Named recipes build valid configurations."""
    for name in RECIPES:
        if name == "facebook":
            continue
        assert recipe_config(name).hash
    assert recipe_config("heatmap").sweep_cascades == (10, 100, 1000, 10000)
    assert recipe_config("simple", {"run.seed": "4"}).seed == 4
    truth, candidates = build_network(recipe_config("simple"))
    assert len(candidates) == truth.num_edges
    with pytest.raises(ConfigError):
        recipe_config("facebook")
    with pytest.raises(ConfigError):
        recipe_config("nonsense")
