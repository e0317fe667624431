"""
pyslicer.cascade
~~~~~~~~~~~~~~~~~~~~
Independent Cascade simulation, observation corruption and sufficient statistics
Licensed under the MIT license.

Activation outcomes are stored as half-open windows ``(lo, hi]`` on the
extended time axis ``-1..T+1``, where slot ``T+1`` stands for "not active
by T". Exact(t) is ``(t-1, t)``, Star is ``(T, T+1)`` and Interval(lo, hi)
is itself. The probability of any outcome is then ``p(hi) - p(lo)`` with
``p(-1) = 0`` and ``p(T+1) = 1``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Any, Iterator, Sequence, Union

import numpy as np
import pandas as pd

from .constants import CASCADE_CHUNK, HIDDEN_TOKEN, NO_OBSERVATION, STAR_TOKEN
from .exceptions import DataFormatError, ObservationError, SimulationError
from .graph import DirectedEdges, EdgeParams, Graph

_LOGGER = logging.getLogger(__name__)

HIDDEN = -2


@dataclass(frozen=True)
class Exact:
    """Activation observed at step ``t``."""

    t: int


@dataclass(frozen=True)
class Interval:
    """Activation somewhere in ``(lo, hi]``.

    ``hi == T + 1`` means the node was last seen inactive at ``lo`` and may
    never have been activated.
    """

    lo: int
    hi: int


@dataclass(frozen=True)
class Star:
    """Not activated by the horizon."""


@dataclass(frozen=True)
class Hidden:
    """Node does not report."""


ActivationOutcome = Union[Exact, Interval, Star, Hidden]


def encode_outcome(outcome: ActivationOutcome, horizon: int) -> tuple[int, int]:
    """Return the ``(lo, hi)`` window of an outcome."""
    if isinstance(outcome, Exact):
        if not 0 <= outcome.t <= horizon:
            raise ObservationError(f"{outcome} outside [0, {horizon}]")
        return outcome.t - 1, outcome.t
    if isinstance(outcome, Star):
        return horizon, horizon + 1
    if isinstance(outcome, Interval):
        if not 0 <= outcome.lo < outcome.hi <= horizon + 1:
            raise ObservationError(f"Invalid {outcome} for horizon {horizon}")
        return outcome.lo, outcome.hi
    return HIDDEN, HIDDEN


def decode_outcome(lo: int, hi: int, horizon: int) -> ActivationOutcome:
    """Inverse of encode_outcome."""
    if lo == HIDDEN:
        return Hidden()
    if lo == horizon and hi == horizon + 1:
        return Star()
    if hi - lo == 1:
        return Exact(hi)
    return Interval(lo, hi)


def format_outcome(outcome: ActivationOutcome, horizon: int) -> str:
    """Return the cascade-file token of an outcome."""
    if isinstance(outcome, Exact):
        return str(outcome.t)
    if isinstance(outcome, Star):
        return STAR_TOKEN
    if isinstance(outcome, Interval):
        hi = STAR_TOKEN if outcome.hi == horizon + 1 else str(outcome.hi)
        return f"{outcome.lo}:{hi}"
    return HIDDEN_TOKEN


def _token_table(horizon: int) -> dict[str, tuple[int, int]]:
    table = {HIDDEN_TOKEN: (HIDDEN, HIDDEN)}
    for hi in range(horizon + 2):
        for lo in range(-1, hi):
            outcome = decode_outcome(lo, hi, horizon)
            if lo == -1 and hi > 0:
                continue
            table[format_outcome(outcome, horizon)] = (lo, hi)
    return table


def parse_outcome(token: str, horizon: int) -> ActivationOutcome:
    """Parse a cascade-file token."""
    try:
        lo, hi = _token_table(horizon)[token.strip()]
    except KeyError as err:
        raise DataFormatError(f"Invalid outcome token {token!r}") from err
    return decode_outcome(lo, hi, horizon)


@dataclass(frozen=True)
class NoiseSpec:
    """Timestamp noise: shift k in [-K, K] is applied with probability pi_k."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        """Validate the noise distribution."""
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) % 2 != 1:
            raise ObservationError(f"Noise needs an odd number of entries, got {probs}")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ObservationError(f"Noise probabilities must sum to 1, got {probs}")

    @classmethod
    def parse(cls, text: str) -> NoiseSpec:
        """Parse ``pi_{-K},...,pi_K``."""
        try:
            return cls(tuple(float(v) for v in text.split(",")))
        except ValueError as err:
            raise ObservationError(f"Invalid noise specification {text!r}") from err

    @property
    def radius(self) -> int:
        """Return the support radius K."""
        return (len(self.probs) - 1) // 2

    @property
    def shifts(self) -> np.ndarray:
        """Return the shifts -K..K."""
        return np.arange(-self.radius, self.radius + 1)

    def is_trivial(self) -> bool:
        """Return if the noise never moves a timestamp."""
        return self.probs[self.radius] == 1.0

    def channel(self, horizon: int) -> np.ndarray:
        """Return w[observed, true] over outcomes ``0..T`` and Star (slot T+1).

        True times are shifted and clipped to [0, T]; Star is never shifted.
        """
        size = horizon + 2
        weights = np.zeros((size, size))
        for true_t in range(horizon + 1):
            for shift, prob in zip(self.shifts, self.probs):
                weights[min(max(true_t + shift, 0), horizon), true_t] += prob
        weights[horizon + 1, horizon + 1] = 1.0
        return weights

    def describe(self) -> str:
        """Return the CLI form of the noise."""
        return ",".join(repr(p) for p in self.probs)


@dataclass(frozen=True)
class SeedPolicy:
    """How the seed of every cascade is picked."""

    kind: str = "uniform_random"
    nodes: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        """Validate the policy."""
        if self.kind not in ("uniform_random", "round_robin", "fixed"):
            raise SimulationError(f"Unknown seed policy {self.kind!r}")
        if self.kind == "fixed" and not self.nodes:
            raise SimulationError("Fixed seed policy needs at least one node")

    @classmethod
    def parse(cls, text: str) -> SeedPolicy:
        """Parse ``uniform_random``, ``round_robin`` or ``fixed:0,5``."""
        kind, _, args = text.strip().partition(":")
        try:
            nodes = tuple(int(v) for v in args.split(",")) if args else ()
        except ValueError as err:
            raise SimulationError(f"Invalid seed policy {text!r}") from err
        return cls(kind, nodes)

    def seeds(self, n: int, start: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """Return seeds for cascades ``start..start+count-1``."""
        if self.kind == "uniform_random":
            return rng.integers(n, size=count)
        index = np.arange(start, start + count)
        if self.kind == "round_robin":
            return index % n
        nodes = np.asarray(self.nodes)
        if nodes.min() < 0 or nodes.max() >= n:
            raise SimulationError(f"Seed outside [0, {n}) in {self.nodes}")
        return nodes[index % len(nodes)]


@dataclass(frozen=True)
class ObservationModel:
    """Who reports (hidden set), when (time grid) and how accurately (noise)."""

    hidden: frozenset[int] = frozenset()
    time_grid: tuple[int, ...] | None = None
    noise: NoiseSpec | None = None
    hidden_fraction: float = 0.0

    @classmethod
    def random(
        cls,
        n: int,
        hidden_fraction: float,
        rng: np.random.Generator,
        time_grid: Sequence[int] | None = None,
        noise: NoiseSpec | None = None,
    ) -> ObservationModel:
        """Hide round(fraction * n) nodes picked uniformly at random."""
        if not 0.0 <= hidden_fraction <= 1.0:
            raise ObservationError(f"Hidden fraction {hidden_fraction} outside [0, 1]")
        count = int(round(hidden_fraction * n))
        hidden = frozenset(int(v) for v in rng.choice(n, size=count, replace=False))
        grid = None if time_grid is None else tuple(sorted(set(time_grid)))
        return cls(hidden, grid, noise, hidden_fraction)

    def grid(self, horizon: int) -> tuple[int, ...]:
        """Return the observation instants for a horizon."""
        if self.time_grid is None:
            return tuple(range(horizon + 1))
        return self.time_grid

    def is_full_grid(self, horizon: int) -> bool:
        """Return if every step is observed."""
        return self.grid(horizon) == tuple(range(horizon + 1))

    def validate(self, n: int, horizon: int) -> None:
        """Check the model against a node count and a horizon."""
        grid = self.grid(horizon)
        if not grid or grid[0] < 0 or grid[-1] > horizon:
            raise ObservationError(f"Time grid {grid} must be within [0, {horizon}]")
        if list(grid) != sorted(set(grid)):
            raise ObservationError(f"Time grid {grid} must be sorted and unique")
        if grid[0] != 0:
            raise ObservationError("Time grid must observe the initial state at t=0")
        if self.hidden and (min(self.hidden) < 0 or max(self.hidden) >= n):
            raise ObservationError(f"Hidden nodes outside [0, {n})")

    def descriptor(self) -> str:
        """Return a one-line description for file headers."""
        times = "full" if self.time_grid is None else ",".join(map(str, self.time_grid))
        noise = "none" if self.noise is None else self.noise.describe()
        return f"xi={self.hidden_fraction!r};times={times};noise={noise}"

    @classmethod
    def from_descriptor(cls, text: str, hidden: frozenset[int] = frozenset()) -> ObservationModel:
        """Parse a descriptor written by descriptor()."""
        fields = dict(part.split("=", 1) for part in text.split(";") if "=" in part)
        try:
            times = fields.get("times", "full")
            grid = None if times == "full" else tuple(int(v) for v in times.split(","))
            noise_text = fields.get("noise", "none")
            noise = None if noise_text == "none" else NoiseSpec.parse(noise_text)
            return cls(hidden, grid, noise, float(fields.get("xi", "0")))
        except ValueError as err:
            raise DataFormatError(f"Invalid observation descriptor {text!r}") from err


def random_time_grid(
    horizon: int, unobserved_fraction: float, rng: np.random.Generator
) -> tuple[int, ...]:
    """Drop a random share of the interior instants 1..T-1; 0 and T stay."""
    interior = np.arange(1, horizon)
    drop = int(round(unobserved_fraction * len(interior)))
    dropped = set(rng.choice(interior, size=drop, replace=False).tolist()) if drop else set()
    return tuple(t for t in range(horizon + 1) if t not in dropped)


@dataclass(frozen=True, eq=False)
class Cascade:
    """One realisation: the seed plus an outcome window per node."""

    seed: int
    horizon: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n(self) -> int:
        """Return the node count."""
        return len(self.lo)

    def outcome(self, node: int) -> ActivationOutcome:
        """Return the outcome of a node."""
        return decode_outcome(int(self.lo[node]), int(self.hi[node]), self.horizon)

    @property
    def outcomes(self) -> list[ActivationOutcome]:
        """Return the outcome of every node."""
        return [self.outcome(i) for i in range(self.n)]

    def activated(self) -> int:
        """Return the number of nodes known to be active by the horizon."""
        return int(((self.hi <= self.horizon) & (self.lo != HIDDEN)).sum())


class ObservedCascade(Cascade):
    """Cascade after corruption; may contain Hidden and Interval outcomes."""


@dataclass(frozen=True, eq=False)
class CascadeSet:
    """A batch of cascades on ``n`` nodes stored as ``(M, n)`` windows."""

    horizon: int
    seeds: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    observed: bool = False
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.seeds)

    def __getitem__(self, index: int) -> Cascade:
        kind = ObservedCascade if self.observed else Cascade
        return kind(int(self.seeds[index]), self.horizon, self.lo[index], self.hi[index])

    def __iter__(self) -> Iterator[Cascade]:
        return (self[k] for k in range(len(self)))

    @property
    def n(self) -> int:
        """Return the node count."""
        return self.lo.shape[1]

    def prefix(self, count: int) -> CascadeSet:
        """Return the first ``count`` cascades."""
        return CascadeSet(
            self.horizon,
            self.seeds[:count],
            self.lo[:count],
            self.hi[:count],
            self.observed,
            dict(self.metadata),
        )

    @classmethod
    def from_cascades(cls, cascades: Sequence[Cascade]) -> CascadeSet:
        """Stack individual cascades."""
        if not cascades:
            raise SimulationError("Cannot stack an empty list of cascades")
        return cls(
            cascades[0].horizon,
            np.array([c.seed for c in cascades]),
            np.stack([c.lo for c in cascades]),
            np.stack([c.hi for c in cascades]),
            any(isinstance(c, ObservedCascade) for c in cascades),
        )


def simulate_times(
    directed: DirectedEdges,
    alpha_dir: np.ndarray,
    seeds: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Activation times (T+1 = never) for a block of single-seed cascades.

    Every directed edge flips its one coin up front, which is equivalent to
    flipping it when the source activates.
    """
    count = len(seeds)
    open_edges = rng.random((count, directed.count)) < alpha_dir
    times = np.full((count, directed.n), horizon + 1, dtype=np.int16)
    times[np.arange(count), seeds] = 0
    for t in range(1, horizon + 1):
        fire = open_edges & (times[:, directed.src] == t - 1)
        reached = directed.sum_into_dst(fire.astype(np.int32)) > 0
        newly = reached & (times == horizon + 1)
        if not newly.any():
            break
        times[newly] = t
    return times


def _windows(times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return (times - 1).astype(np.int16), times.astype(np.int16)


def simulate_cascade(
    graph: Graph,
    params: EdgeParams,
    seed: int,
    horizon: int,
    rng: np.random.Generator,
) -> Cascade:
    """Simulate one IC cascade from a single seed."""
    if not 0 <= seed < graph.n or horizon < 1:
        raise SimulationError(f"Need seed in [0, {graph.n}) and T >= 1")
    alpha_dir = np.repeat(params.aligned(graph.edges), 2)
    times = simulate_times(graph.directed, alpha_dir, np.array([seed]), horizon, rng)
    lo, hi = _windows(times[0])
    return Cascade(seed, horizon, lo, hi)


def _chunk_rng(master_seed: int, chunk: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, *tags, chunk])


def simulate_set(
    graph: Graph,
    params: EdgeParams,
    count: int,
    horizon: int,
    seed_policy: SeedPolicy,
    master_seed: int,
    threads: int = 1,
) -> CascadeSet:
    """Simulate ``count`` independent cascades.

    Chunk ``c`` of CASCADE_CHUNK cascades uses a stream derived from
    ``(master_seed, c)``, so the output does not depend on ``threads`` and
    the first ``k`` cascades are the same for any ``count >= k``.
    """
    if count < 1 or horizon < 1:
        raise SimulationError(f"Need at least one cascade and T >= 1, got {count}, {horizon}")
    alpha_dir = np.repeat(params.aligned(graph.edges), 2)
    directed = graph.directed

    def run(chunk: int) -> tuple[np.ndarray, np.ndarray]:
        rng = _chunk_rng(master_seed, chunk)
        seeds = seed_policy.seeds(graph.n, chunk * CASCADE_CHUNK, CASCADE_CHUNK, rng)
        return seeds, simulate_times(directed, alpha_dir, seeds, horizon, rng)

    chunks = range(math.ceil(count / CASCADE_CHUNK))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    seeds = np.concatenate([r[0] for r in results])[:count]
    times = np.concatenate([r[1] for r in results])[:count]
    lo, hi = _windows(times)
    _LOGGER.debug(
        "Simulated %s cascades, mean activated %.3f",
        count,
        float((times <= horizon).sum(1).mean()),
    )
    return CascadeSet(horizon, seeds, lo, hi)


def validate_cascade(graph: Graph, cascade: Cascade) -> None:
    """Check a ground-truth cascade against the IC reachability rule."""
    horizon = cascade.horizon
    for node in range(graph.n):
        outcome = cascade.outcome(node)
        if isinstance(outcome, (Hidden, Interval)):
            raise SimulationError(f"Ground truth cannot contain {outcome} (node {node})")
        if node == cascade.seed:
            if outcome != Exact(0):
                raise SimulationError(f"Seed {node} must be active at t=0, got {outcome}")
            continue
        if isinstance(outcome, Exact):
            if outcome.t == 0:
                raise SimulationError(f"Node {node} active at t=0 but is not the seed")
            parents = [
                k for k in graph.neighbors(node) if cascade.outcome(k) == Exact(outcome.t - 1)
            ]
            if not parents:
                raise SimulationError(
                    f"Node {node} activated at {outcome.t} without an active neighbor"
                )
    if cascade.hi.max(initial=0) > horizon + 1:
        raise SimulationError("Activation beyond the horizon")


def _observe_block(
    seeds: np.ndarray,
    times: np.ndarray,
    model: ObservationModel,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise, then time grid, then hiding, for ground-truth times (T+1 = never)."""
    count, n = times.shape
    rows = np.arange(count)
    times = times.astype(np.int64)
    if model.noise is not None:
        shifts = rng.choice(model.noise.shifts, size=(count, n), p=model.noise.probs)
        noisy = (times <= horizon) & (np.arange(n)[None, :] != seeds[:, None])
        times = np.where(noisy, np.clip(times + shifts, 0, horizon), times)

    marks = np.array(list(model.grid(horizon)) + [horizon + 1])
    pos = np.searchsorted(marks, times, side="left")
    hi = marks[pos]
    lo = np.where(pos > 0, marks[np.maximum(pos - 1, 0)], -1)

    if model.hidden:
        hidden = np.zeros((count, n), dtype=bool)
        hidden[:, sorted(model.hidden)] = True
        hidden[rows, seeds] = False
        lo = np.where(hidden, HIDDEN, lo)
        hi = np.where(hidden, HIDDEN, hi)
    return lo.astype(np.int16), hi.astype(np.int16)


def _ground_truth_times(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    if (lo == HIDDEN).any() or ((hi - lo) != 1).any():
        raise ObservationError("Observation models apply to ground-truth cascades only")
    return hi


def apply_observation(
    cascade: Cascade, model: ObservationModel, rng: np.random.Generator
) -> ObservedCascade:
    """Corrupt one ground-truth cascade."""
    model.validate(cascade.n, cascade.horizon)
    times = _ground_truth_times(cascade.lo, cascade.hi)[None, :]
    lo, hi = _observe_block(np.array([cascade.seed]), times, model, cascade.horizon, rng)
    return ObservedCascade(cascade.seed, cascade.horizon, lo[0], hi[0])


def observe_set(
    cascades: CascadeSet, model: ObservationModel, master_seed: int
) -> CascadeSet:
    """Corrupt a batch; chunk streams keep prefixes stable like simulate_set."""
    model.validate(cascades.n, cascades.horizon)
    times = _ground_truth_times(cascades.lo, cascades.hi)
    los, his = [], []
    for chunk, start in enumerate(range(0, len(cascades), CASCADE_CHUNK)):
        stop = start + CASCADE_CHUNK
        rng = _chunk_rng(master_seed, chunk, 1)
        lo, hi = _observe_block(
            cascades.seeds[start:stop], times[start:stop], model, cascades.horizon, rng
        )
        los.append(lo)
        his.append(hi)
    metadata = dict(cascades.metadata)
    metadata["observation"] = model.descriptor()
    return CascadeSet(
        cascades.horizon,
        cascades.seeds,
        np.concatenate(los),
        np.concatenate(his),
        True,
        metadata,
    )


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Outcome counts per initial-condition class and observed node.

    Rows ``(cls[r], node[r], lo[r], hi[r])`` occurred ``count[r]`` times; the
    class index refers to ``class_seeds``.
    """

    n: int
    horizon: int
    class_seeds: np.ndarray
    class_sizes: np.ndarray
    cls: np.ndarray
    node: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray

    @property
    def num_classes(self) -> int:
        """Return |S|."""
        return len(self.class_seeds)

    @property
    def num_cascades(self) -> int:
        """Return the number of aggregated cascades."""
        return int(self.class_sizes.sum())

    @property
    def has_intervals(self) -> bool:
        """Return if any row is a multi-step interval."""
        return bool(((self.hi - self.lo) > 1).any())

    def initial_conditions(self, classes: slice | None = None) -> np.ndarray:
        """Return p-bar for every class (rows) as a dense matrix."""
        seeds = self.class_seeds if classes is None else self.class_seeds[classes]
        pbar = np.zeros((len(seeds), self.n))
        pbar[np.arange(len(seeds)), seeds] = 1.0
        return pbar

    def counts_for(self, seed: int, node: int) -> dict[ActivationOutcome, int]:
        """Return the outcome histogram of one node under one seed class."""
        matches = np.flatnonzero(self.class_seeds == seed)
        if not len(matches):
            return {}
        rows = np.flatnonzero((self.cls == matches[0]) & (self.node == node))
        return {
            decode_outcome(int(self.lo[r]), int(self.hi[r]), self.horizon): int(self.count[r])
            for r in rows
        }

    def merge(self, other: SufficientStats) -> SufficientStats:
        """Combine two aggregates over the same nodes and horizon."""
        if (self.n, self.horizon) != (other.n, other.horizon):
            raise ObservationError("Cannot merge statistics of different shapes")
        frame = pd.concat([self._frame(), other._frame()], ignore_index=True)
        sizes = pd.concat(
            [
                pd.Series(self.class_sizes, index=self.class_seeds),
                pd.Series(other.class_sizes, index=other.class_seeds),
            ]
        ).groupby(level=0).sum()
        grouped = frame.groupby(["seed", "node", "lo", "hi"], sort=True)["count"].sum()
        return _stats_from_counts(self.n, self.horizon, grouped, sizes)

    def _frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "seed": self.class_seeds[self.cls],
                "node": self.node,
                "lo": self.lo,
                "hi": self.hi,
                "count": self.count,
            }
        )


def _stats_from_counts(
    n: int, horizon: int, counts: pd.Series, sizes: pd.Series
) -> SufficientStats:
    sizes = sizes.sort_index()
    class_seeds = sizes.index.to_numpy(dtype=np.int64)
    index = counts.index
    seeds = index.get_level_values("seed").to_numpy(dtype=np.int64)
    return SufficientStats(
        n,
        horizon,
        class_seeds,
        sizes.to_numpy(dtype=np.int64),
        np.searchsorted(class_seeds, seeds),
        index.get_level_values("node").to_numpy(dtype=np.int64),
        index.get_level_values("lo").to_numpy(dtype=np.int64),
        index.get_level_values("hi").to_numpy(dtype=np.int64),
        counts.to_numpy(dtype=float),
    )


def aggregate_statistics(
    cascades: CascadeSet | Sequence[Cascade], drop_intervals: bool = False
) -> SufficientStats:
    """Group observed outcomes by seed class, node and outcome.

    Hidden outcomes are dropped. With ``drop_intervals`` multi-step
    intervals are treated as hidden too.
    """
    if not isinstance(cascades, CascadeSet):
        cascades = CascadeSet.from_cascades(list(cascades))
    if len(cascades) == 0:
        raise ObservationError("No cascades to aggregate")
    seeds = cascades.seeds.astype(np.int64)
    if seeds.min() < 0 or seeds.max() >= cascades.n:
        raise ObservationError("Every cascade needs a known seed node")

    span = cascades.horizon + 4
    node = np.broadcast_to(np.arange(cascades.n), cascades.lo.shape)
    lo = cascades.lo.astype(np.int64)
    hi = cascades.hi.astype(np.int64)
    keep = lo != HIDDEN
    if drop_intervals:
        keep &= (hi - lo) == 1
    keys = (
        (seeds[:, None] * cascades.n + node) * span + (lo + 2)
    ) * span + (hi + 2)
    counts = pd.Series(keys[keep]).value_counts(sort=False).sort_index()
    codes = counts.index.to_numpy(dtype=np.int64)
    hi_codes, rest = codes % span - 2, codes // span
    lo_codes, rest = rest % span - 2, rest // span
    index = pd.MultiIndex.from_arrays(
        [rest // cascades.n, rest % cascades.n, lo_codes, hi_codes],
        names=["seed", "node", "lo", "hi"],
    )
    sizes = pd.Series(seeds).value_counts()
    stats = _stats_from_counts(
        cascades.n, cascades.horizon, pd.Series(counts.to_numpy(), index=index), sizes
    )
    _LOGGER.debug(
        "Aggregated %s cascades into %s classes and %s rows",
        len(cascades),
        stats.num_classes,
        len(stats.count),
    )
    return stats


def write_cascades(
    path: str | Path, cascades: CascadeSet, metadata: dict[str, Any] | None = None
) -> None:
    """Write ``cascade_id<TAB>node<TAB>outcome`` records under a header."""
    horizon = cascades.horizon
    header = {
        "horizon": horizon,
        "n": cascades.n,
        "observation": cascades.metadata.get("observation", NO_OBSERVATION),
        **(metadata or {}),
        "seeds": ",".join(map(str, cascades.seeds.tolist())),
    }
    tokens = {window: token for token, window in _token_table(horizon).items()}
    span = horizon + 4
    lookup = np.empty(span * span, dtype=object)
    for (lo, hi), token in tokens.items():
        lookup[(lo + 2) * span + (hi + 2)] = token
    codes = (cascades.lo.astype(np.int64) + 2) * span + (cascades.hi.astype(np.int64) + 2)
    frame = pd.DataFrame(
        {
            "cascade": np.repeat(np.arange(len(cascades)), cascades.n),
            "node": np.tile(np.arange(cascades.n), len(cascades)),
            "outcome": lookup[codes.ravel()],
        }
    )
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for key, value in header.items():
                handle.write(f"# {key}={value}\n")
            frame.to_csv(handle, sep="\t", header=False, index=False)
    except OSError as err:
        _LOGGER.error("Error writing cascades %s. %s", path, err)
        raise DataFormatError(f"Cannot write {path}") from err


def read_cascades(path: str | Path) -> CascadeSet:
    """Read a cascade file written by write_cascades."""
    metadata: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = value
        frame = pd.read_csv(
            path,
            sep="\t",
            comment="#",
            header=None,
            names=["cascade", "node", "outcome"],
            dtype={"cascade": np.int64, "node": np.int64, "outcome": str},
            keep_default_na=False,
        )
    except (OSError, ValueError) as err:
        _LOGGER.error("Error reading cascades %s. %s", path, err)
        raise DataFormatError(f"Cannot read {path}") from err
    try:
        horizon, n = int(metadata["horizon"]), int(metadata["n"])
        seeds = np.array([int(v) for v in metadata["seeds"].split(",") if v], dtype=np.int64)
    except (KeyError, ValueError) as err:
        raise DataFormatError(f"{path}: header needs horizon, n and seeds") from err

    table = _token_table(horizon)
    windows = frame["outcome"].map(table)
    if windows.isna().any():
        bad = frame.loc[windows.isna(), "outcome"].iloc[0]
        raise DataFormatError(f"{path}: invalid outcome token {bad!r}")
    count = len(seeds)
    lo = np.full((count, n), HIDDEN, dtype=np.int16)
    hi = np.full((count, n), HIDDEN, dtype=np.int16)
    rows, cols = frame["cascade"].to_numpy(), frame["node"].to_numpy()
    if len(rows) and (rows.max() >= count or cols.max() >= n):
        raise DataFormatError(f"{path}: record outside the declared cascades or nodes")
    pairs = np.array(windows.tolist(), dtype=np.int16).reshape(-1, 2)
    lo[rows, cols], hi[rows, cols] = pairs[:, 0], pairs[:, 1]
    observed = metadata.get("observation", NO_OBSERVATION) != NO_OBSERVATION
    return CascadeSet(horizon, seeds, lo, hi, observed, metadata)
