"""Tests for the cascade module."""
import numpy as np
import pytest

from pyslicer.cascade import (
    HIDDEN,
    Cascade,
    CascadeSet,
    Exact,
    Hidden,
    Interval,
    NoiseSpec,
    ObservationModel,
    SeedPolicy,
    Star,
    aggregate_statistics,
    apply_observation,
    decode_outcome,
    encode_outcome,
    format_outcome,
    observe_set,
    parse_outcome,
    random_time_grid,
    read_cascades,
    simulate_cascade,
    simulate_set,
    validate_cascade,
    write_cascades,
)
from pyslicer.constants import NO_OBSERVATION
from pyslicer.exceptions import DataFormatError, ObservationError, SimulationError
from pyslicer.graph import EdgeParams, gen_erdos_renyi, sample_params, Uniform

from tests.conftest import fixture_path


def test_outcome_windows():
    """Every outcome maps to a (lo, hi] window on the extended axis."""
    assert encode_outcome(Exact(0), 5) == (-1, 0)
    assert encode_outcome(Exact(3), 5) == (2, 3)
    assert encode_outcome(Star(), 5) == (5, 6)
    assert encode_outcome(Interval(1, 4), 5) == (1, 4)
    assert encode_outcome(Interval(3, 6), 5) == (3, 6)
    assert encode_outcome(Hidden(), 5) == (HIDDEN, HIDDEN)
    assert decode_outcome(2, 3, 5) == Exact(3)
    assert decode_outcome(5, 6, 5) == Star()
    assert decode_outcome(1, 4, 5) == Interval(1, 4)
    with pytest.raises(ObservationError):
        encode_outcome(Exact(6), 5)
    with pytest.raises(ObservationError):
        encode_outcome(Interval(4, 2), 5)


def test_outcome_tokens():
    """Cascade-file tokens."""
    assert format_outcome(Exact(2), 5) == "2"
    assert format_outcome(Star(), 5) == "*"
    assert format_outcome(Interval(1, 4), 5) == "1:4"
    assert format_outcome(Interval(3, 6), 5) == "3:*"
    assert format_outcome(Hidden(), 5) == "?"
    for token, outcome in [
        ("0", Exact(0)),
        ("*", Star()),
        ("0:2", Interval(0, 2)),
        ("4:*", Interval(4, 6)),
        ("?", Hidden()),
    ]:
        assert parse_outcome(token, 5) == outcome
    with pytest.raises(DataFormatError):
        parse_outcome("7", 5)
    with pytest.raises(DataFormatError):
        parse_outcome("2:3", 5)


def test_noise_spec():
    """Noise distributions are odd-length and normalised."""
    noise = NoiseSpec.parse("0.2,0.6,0.2")
    assert noise.radius == 1
    assert list(noise.shifts) == [-1, 0, 1]
    assert not noise.is_trivial()
    assert NoiseSpec((1.0,)).is_trivial()
    assert NoiseSpec.parse(noise.describe()) == noise
    with pytest.raises(ObservationError):
        NoiseSpec((0.5, 0.5))
    with pytest.raises(ObservationError):
        NoiseSpec((0.2, 0.2, 0.2))
    with pytest.raises(ObservationError):
        NoiseSpec.parse("a,b,c")


def test_noise_channel_is_stochastic():
    """Columns of the channel sum to one, boundaries absorb clipped mass."""
    channel = NoiseSpec((0.2, 0.6, 0.2)).channel(4)
    assert channel.shape == (6, 6)
    np.testing.assert_allclose(channel.sum(axis=0), 1.0)
    assert channel[0, 0] == pytest.approx(0.8)
    assert channel[4, 4] == pytest.approx(0.8)
    assert channel[2, 1] == pytest.approx(0.2)
    assert channel[5, 5] == 1.0
    np.testing.assert_array_equal(NoiseSpec((1.0,)).channel(4), np.eye(6))


def test_seed_policy(rng):
    """Seed policies."""
    assert SeedPolicy.parse("fixed:0,5") == SeedPolicy("fixed", (0, 5))
    fixed = SeedPolicy.parse("fixed:0,5").seeds(10, 1, 3, rng)
    assert list(fixed) == [5, 0, 5]
    assert list(SeedPolicy("round_robin").seeds(3, 2, 4, rng)) == [2, 0, 1, 2]
    seeds = SeedPolicy().seeds(7, 0, 100, rng)
    assert seeds.min() >= 0 and seeds.max() < 7
    with pytest.raises(SimulationError):
        SeedPolicy("everyone")
    with pytest.raises(SimulationError):
        SeedPolicy("fixed")
    with pytest.raises(SimulationError):
        SeedPolicy.parse("fixed:9").seeds(5, 0, 1, rng)


def test_observation_model(rng):
    """Random hiding and validation."""
    model = ObservationModel.random(20, 0.25, rng, (0, 3, 5))
    assert len(model.hidden) == 5
    assert model.grid(5) == (0, 3, 5)
    assert not model.is_full_grid(5)
    assert ObservationModel().is_full_grid(5)
    model.validate(20, 5)
    with pytest.raises(ObservationError):
        ObservationModel(time_grid=(1, 5)).validate(20, 5)
    with pytest.raises(ObservationError):
        ObservationModel(time_grid=(0, 7)).validate(20, 5)
    with pytest.raises(ObservationError):
        ObservationModel(frozenset({25})).validate(20, 5)
    with pytest.raises(ObservationError):
        ObservationModel.random(20, 1.5, rng)


def test_observation_descriptor():
    """Descriptors round-trip the grid and the noise."""
    model = ObservationModel(frozenset(), (0, 2, 4), NoiseSpec((0.25, 0.5, 0.25)), 0.1)
    parsed = ObservationModel.from_descriptor(model.descriptor())
    assert parsed.time_grid == (0, 2, 4)
    assert parsed.noise == model.noise
    assert parsed.hidden_fraction == 0.1
    with pytest.raises(DataFormatError):
        ObservationModel.from_descriptor("times=a,b")


def test_random_time_grid(rng):
    """Interior instants are dropped, the ends are kept."""
    grid = random_time_grid(7, 1 / 3, rng)
    assert grid[0] == 0 and grid[-1] == 7
    assert len(grid) == 8 - 2
    assert random_time_grid(5, 0.0, rng) == (0, 1, 2, 3, 4, 5)


def test_simulate_deterministic_edges(path_graph, rng):
    """With alpha = 1 activation times are graph distances."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    cascade = simulate_cascade(path_graph, params, 0, 5, rng)
    assert cascade.outcomes == [Exact(0), Exact(1), Exact(2)]
    assert cascade.activated() == 3
    short = simulate_cascade(path_graph, params, 0, 1, rng)
    assert short.outcomes == [Exact(0), Exact(1), Star()]

    closed = EdgeParams.constant(path_graph.edges, 0.0)
    assert simulate_cascade(path_graph, closed, 1, 3, rng).outcomes == [
        Star(),
        Exact(0),
        Star(),
    ]
    with pytest.raises(SimulationError):
        simulate_cascade(path_graph, params, 3, 3, rng)


def test_simulated_cascades_are_valid(rng):
    """Every activation has a neighbor activated one step earlier."""
    graph = gen_erdos_renyi(30, 3.0, rng)
    params = sample_params(graph, Uniform(0.3, 0.9), rng)
    cascades = simulate_set(graph, params, 200, 6, SeedPolicy(), 11)
    for cascade in cascades:
        validate_cascade(graph, cascade)
    assert (cascades.lo[np.arange(200), cascades.seeds] == -1).all()


def test_validate_cascade_rejects_jumps(path_graph):
    """A node cannot activate without an active neighbor."""
    cascade = Cascade(0, 3, np.array([-1, 2, 0]), np.array([0, 3, 1]))
    with pytest.raises(SimulationError):
        validate_cascade(path_graph, cascade)


def test_simulate_set_prefixes_and_threads(rng):
    """Smaller sets are prefixes of larger ones, whatever the thread count."""
    graph = gen_erdos_renyi(25, 3.0, rng)
    params = sample_params(graph, Uniform(0.0, 1.0), rng)
    small = simulate_set(graph, params, 300, 5, SeedPolicy(), 42)
    large = simulate_set(graph, params, 1200, 5, SeedPolicy(), 42, threads=3)
    np.testing.assert_array_equal(large.prefix(300).hi, small.hi)
    np.testing.assert_array_equal(large.seeds[:300], small.seeds)
    other = simulate_set(graph, params, 300, 5, SeedPolicy(), 43)
    assert not np.array_equal(other.hi, small.hi)


def test_influence_grows_with_alpha(rng):
    """Raising every alpha raises the mean number of activations."""
    graph = gen_erdos_renyi(50, 3.0, rng)
    low = simulate_set(graph, EdgeParams.constant(graph.edges, 0.1), 1000, 5, SeedPolicy(), 1)
    high = simulate_set(graph, EdgeParams.constant(graph.edges, 0.9), 1000, 5, SeedPolicy(), 1)
    mean_low = np.mean([c.activated() for c in low])
    mean_high = np.mean([c.activated() for c in high])
    assert mean_high > mean_low


def test_observation_time_grid(path_graph, rng):
    """Activations between grid instants become intervals."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    cascade = simulate_cascade(path_graph, params, 0, 3, rng)

    coarse = apply_observation(cascade, ObservationModel(time_grid=(0, 3)), rng)
    assert coarse.outcomes == [Exact(0), Interval(0, 3), Interval(0, 3)]

    early = apply_observation(cascade, ObservationModel(time_grid=(0, 1)), rng)
    assert early.outcomes == [Exact(0), Exact(1), Interval(1, 4)]

    full = apply_observation(cascade, ObservationModel(), rng)
    assert full.outcomes == cascade.outcomes


def test_observation_star_after_last_instant(path_graph, rng):
    """A Star seen through a grid ending before T is an open interval."""
    closed = EdgeParams.constant(path_graph.edges, 0.0)
    cascade = simulate_cascade(path_graph, closed, 0, 4, rng)
    observed = apply_observation(cascade, ObservationModel(time_grid=(0, 2)), rng)
    assert observed.outcomes == [Exact(0), Interval(2, 5), Interval(2, 5)]
    with_end = apply_observation(cascade, ObservationModel(time_grid=(0, 2, 4)), rng)
    assert with_end.outcomes == [Exact(0), Star(), Star()]


def test_observation_hides_non_seeds(path_graph, rng):
    """Hidden nodes report nothing, except when they seed the cascade."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    model = ObservationModel(frozenset({0, 2}))
    from_zero = apply_observation(simulate_cascade(path_graph, params, 0, 3, rng), model, rng)
    assert from_zero.outcomes == [Exact(0), Exact(1), Hidden()]
    from_one = apply_observation(simulate_cascade(path_graph, params, 1, 3, rng), model, rng)
    assert from_one.outcomes == [Hidden(), Exact(0), Hidden()]


def test_observation_noise(path_graph, rng):
    """Timestamps shift and clip; seeds and Star never move."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    late = ObservationModel(noise=NoiseSpec((0.0, 0.0, 1.0)))
    cascade = simulate_cascade(path_graph, params, 0, 2, rng)
    assert apply_observation(cascade, late, rng).outcomes == [Exact(0), Exact(2), Exact(2)]

    early = ObservationModel(noise=NoiseSpec((1.0, 0.0, 0.0)))
    assert apply_observation(cascade, early, rng).outcomes == [Exact(0), Exact(0), Exact(1)]

    closed = simulate_cascade(path_graph, EdgeParams.constant(path_graph.edges, 0.0), 0, 2, rng)
    assert apply_observation(closed, early, rng).outcomes == [Exact(0), Star(), Star()]


def test_observation_needs_ground_truth(path_graph, rng):
    """Corrupted cascades cannot be corrupted again."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    cascade = simulate_cascade(path_graph, params, 0, 3, rng)
    observed = apply_observation(cascade, ObservationModel(frozenset({2})), rng)
    with pytest.raises(ObservationError):
        apply_observation(observed, ObservationModel(), rng)


def test_observe_set_prefixes(rng):
    """Observation streams keep prefixes stable and tag the metadata."""
    graph = gen_erdos_renyi(20, 3.0, rng)
    params = sample_params(graph, Uniform(0.2, 0.8), rng)
    model = ObservationModel.random(20, 0.3, rng, None, NoiseSpec((0.2, 0.6, 0.2)))
    clean = simulate_set(graph, params, 1100, 5, SeedPolicy(), 5)
    large = observe_set(clean, model, 9)
    small = observe_set(clean.prefix(600), model, 9)
    np.testing.assert_array_equal(large.prefix(600).lo, small.lo)
    np.testing.assert_array_equal(large.prefix(600).hi, small.hi)
    assert large.observed
    assert large.metadata["observation"] == model.descriptor()


def test_aggregate_statistics(path_graph, rng):
    """Outcomes are counted per seed class and node; hidden ones are dropped."""
    params = EdgeParams.constant(path_graph.edges, 1.0)
    cascades = [simulate_cascade(path_graph, params, seed, 2, rng) for seed in (0, 0, 2)]
    stats = aggregate_statistics(cascades)
    assert stats.num_classes == 2
    assert stats.num_cascades == 3
    assert list(stats.class_seeds) == [0, 2]
    assert list(stats.class_sizes) == [2, 1]
    assert stats.counts_for(0, 2) == {Exact(2): 2}
    assert stats.counts_for(2, 0) == {Exact(2): 1}
    assert stats.counts_for(1, 0) == {}
    assert not stats.has_intervals
    np.testing.assert_array_equal(stats.initial_conditions(), [[1, 0, 0], [0, 0, 1]])

    hidden = CascadeSet.from_cascades(
        [apply_observation(c, ObservationModel(frozenset({1})), rng) for c in cascades]
    )
    reduced = aggregate_statistics(hidden)
    assert reduced.counts_for(0, 1) == {}
    assert reduced.counts_for(0, 2) == {Exact(2): 2}


def test_aggregate_drop_intervals():
    """The naive treatment turns intervals into hidden outcomes."""
    cascades = read_cascades(fixture_path("cascades.tsv"))
    stats = aggregate_statistics(cascades)
    assert stats.has_intervals
    assert stats.counts_for(0, 1) == {Exact(1): 1, Interval(1, 4): 1}
    dropped = aggregate_statistics(cascades, drop_intervals=True)
    assert not dropped.has_intervals
    assert dropped.counts_for(0, 1) == {Exact(1): 1}
    assert dropped.counts_for(2, 0) == {}


def test_aggregate_errors():
    """Empty sets and unknown seeds are rejected."""
    empty = CascadeSet(3, np.array([], dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ObservationError):
        aggregate_statistics(empty)
    bad_seed = CascadeSet(3, np.array([5]), np.array([[-1, 3]]), np.array([[0, 4]]))
    with pytest.raises(ObservationError):
        aggregate_statistics(bad_seed)


def test_stats_merge(path_graph, rng):
    """Merging equals aggregating the union."""
    params = EdgeParams.constant(path_graph.edges, 0.5)
    first = simulate_set(path_graph, params, 40, 3, SeedPolicy("round_robin"), 1)
    second = simulate_set(path_graph, params, 30, 3, SeedPolicy("round_robin"), 2)
    merged = aggregate_statistics(first).merge(aggregate_statistics(second))
    union = aggregate_statistics(list(first) + list(second))
    np.testing.assert_array_equal(merged.class_sizes, union.class_sizes)
    np.testing.assert_array_equal(merged.count, union.count)
    np.testing.assert_array_equal(merged.hi, union.hi)


def test_read_cascades_fixture():
    """Header and tokens of a cascade file."""
    cascades = read_cascades(fixture_path("cascades.tsv"))
    assert len(cascades) == 3
    assert cascades.horizon == 3
    assert cascades.n == 3
    assert list(cascades.seeds) == [0, 0, 2]
    assert cascades.observed
    assert cascades[0].outcomes == [Exact(0), Exact(1), Star()]
    assert cascades[1].outcomes == [Exact(0), Interval(1, 4), Hidden()]
    assert cascades[2].outcomes == [Interval(0, 2), Exact(1), Exact(0)]


def test_cascade_file_roundtrip(tmp_path, rng):
    """Written cascade files read back unchanged."""
    graph = gen_erdos_renyi(15, 3.0, rng)
    params = sample_params(graph, Uniform(0.2, 0.8), rng)
    clean = simulate_set(graph, params, 50, 4, SeedPolicy(), 3)
    observed = observe_set(clean, ObservationModel.random(15, 0.2, rng, (0, 2, 3)), 4)
    path = tmp_path / "cascades.tsv"
    write_cascades(path, observed, {"config": "abc", "seed": 3})
    parsed = read_cascades(path)
    np.testing.assert_array_equal(parsed.lo, observed.lo)
    np.testing.assert_array_equal(parsed.hi, observed.hi)
    np.testing.assert_array_equal(parsed.seeds, observed.seeds)
    assert parsed.observed
    assert parsed.metadata["config"] == "abc"


def test_clean_cascade_file_roundtrip(tmp_path, rng):
    """Uncorrupted sets carry the empty observation descriptor."""
    graph = gen_erdos_renyi(15, 3.0, rng)
    params = sample_params(graph, Uniform(0.2, 0.8), rng)
    clean = simulate_set(graph, params, 20, 4, SeedPolicy(), 3)
    path = tmp_path / "clean.tsv"
    write_cascades(path, clean)
    assert f"observation={NO_OBSERVATION}" in path.read_text()
    parsed = read_cascades(path)
    assert not parsed.observed
    np.testing.assert_array_equal(parsed.lo, clean.lo)


def test_read_cascades_errors(tmp_path):
    """Bad tokens and missing headers raise DataFormatError."""
    bad = tmp_path / "bad.tsv"
    bad.write_text("# horizon=2\n# n=2\n# seeds=0\n0\t0\t0\n0\t1\tx\n")
    with pytest.raises(DataFormatError):
        read_cascades(bad)
    headless = tmp_path / "headless.tsv"
    headless.write_text("0\t0\t0\n")
    with pytest.raises(DataFormatError):
        read_cascades(headless)
