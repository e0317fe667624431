"""
pyslicer.dmp
~~~~~~~~~~~~~~~~~~~~
Dynamic message passing for the Independent Cascade model
Licensed under the MIT license.

Arrays are time-major: marginals have shape ``(T+1, S, n)`` and messages
``(T+1, S, 2m)`` for ``S`` initial conditions processed together. Message
``e`` is ``p_{src[e] -> dst[e]}(t)``, the probability that ``src[e]`` is
active at ``t`` on the graph with ``dst[e]`` removed.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .cascade import ActivationOutcome, Hidden, encode_outcome, simulate_times
from .constants import BRUTEFORCE_BLOCK, BRUTEFORCE_MAX_DIRECTED_EDGES, GUARD_THRESHOLD
from .exceptions import BudgetExceededError, DataFormatError, ObservationError, SimulationError
from .graph import CandidateEdgeSet, DirectedEdges, EdgeParams, Graph

_LOGGER = logging.getLogger(__name__)


@dataclass
class KernelCounters:
    """Work done by the forward and backward kernels."""

    message_updates: int = 0
    fallbacks: int = 0

    def reset(self) -> None:
        """Zero all counters."""
        self.message_updates = 0
        self.fallbacks = 0


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Probability of every node being active at t=0."""

    pbar: np.ndarray

    def __post_init__(self) -> None:
        """Validate the initial condition."""
        pbar = np.asarray(self.pbar, dtype=float)
        object.__setattr__(self, "pbar", pbar)
        if pbar.ndim != 1 or (pbar.size and (pbar.min() < 0 or pbar.max() > 1)):
            raise SimulationError("Initial probabilities must be a vector in [0, 1]")

    @classmethod
    def single_seed(cls, n: int, seed: int) -> InitialCondition:
        """Return the condition where only ``seed`` is active."""
        if not 0 <= seed < n:
            raise SimulationError(f"Seed {seed} outside [0, {n})")
        pbar = np.zeros(n)
        pbar[seed] = 1.0
        return cls(pbar)

    @property
    def key(self) -> int | tuple[float, ...]:
        """Return the seed id for single-seed conditions, else the full vector."""
        active = np.flatnonzero(self.pbar)
        if len(active) == 1 and self.pbar[active[0]] == 1.0:
            return int(active[0])
        return tuple(self.pbar.tolist())


@dataclass(frozen=True, eq=False)
class DmpRun:
    """Marginals ``(T+1, n)`` and messages ``(T+1, 2m)`` of one initial condition."""

    horizon: int
    marginals: np.ndarray
    messages: np.ndarray
    directed: DirectedEdges

    def message(self, i: int, j: int) -> np.ndarray:
        """Return ``p_{i->j}(t)`` for t = 0..T."""
        hits = np.flatnonzero((self.directed.src == i) & (self.directed.dst == j))
        if not len(hits):
            raise SimulationError(f"No directed edge {i}->{j}")
        return self.messages[:, hits[0]]


@dataclass(frozen=True, eq=False)
class DmpBatch:
    """Forward pass over a block of initial conditions."""

    horizon: int
    pbar: np.ndarray
    marginals: np.ndarray
    messages: np.ndarray
    directed: DirectedEdges

    def __len__(self) -> int:
        return self.pbar.shape[0]

    def run(self, index: int) -> DmpRun:
        """Return the run of one initial condition."""
        return DmpRun(
            self.horizon,
            self.marginals[:, index],
            self.messages[:, index],
            self.directed,
        )

    def extended_marginals(self) -> np.ndarray:
        """Return marginals padded with p(-1) = 0 and p(T+1) = 1."""
        shape = (1,) + self.marginals.shape[1:]
        return np.concatenate([np.zeros(shape), self.marginals, np.ones(shape)])


def directed_alphas(
    edge_set: Graph | CandidateEdgeSet, params: EdgeParams | np.ndarray
) -> tuple[DirectedEdges, np.ndarray]:
    """Return the directed layout and per-orientation alpha of an edge set."""
    graph = edge_set.graph if isinstance(edge_set, CandidateEdgeSet) else edge_set
    values = params.aligned(graph.edges) if isinstance(params, EdgeParams) else params
    values = np.asarray(values, dtype=float)
    if values.shape != (graph.num_edges,):
        raise SimulationError(
            f"Expected {graph.num_edges} parameters, got shape {values.shape}"
        )
    return graph.directed, np.repeat(values, 2)


def _direct_messages(
    directed: DirectedEdges, factors: np.ndarray, stay: np.ndarray
) -> np.ndarray:
    """Cavity products per node with prefix and suffix products.

    ``factors[..., e]`` is ``1 - alpha[e] * p_e(t-1)`` and ``stay`` is
    ``1 - pbar``. The message leaving ``j`` towards ``i`` skips the factor of
    the edge ``i -> j``.
    """
    out = np.empty_like(factors)
    for node, incoming in enumerate(directed.incoming):
        if not len(incoming):
            continue
        local = factors[..., incoming]
        ones = np.ones(local.shape[:-1] + (1,))
        prefix = np.cumprod(np.concatenate([ones, local[..., :-1]], axis=-1), axis=-1)
        suffix = np.cumprod(
            np.concatenate([ones, local[..., :0:-1]], axis=-1), axis=-1
        )[..., ::-1]
        out[..., incoming ^ 1] = 1.0 - stay[..., node, None] * prefix * suffix
    return out


def excluded_product(
    directed: DirectedEdges, factors: np.ndarray, node: int, *skip: int
) -> float:
    """Product of the factors of edges entering ``node``, leaving out ``skip``."""
    incoming = directed.incoming[node]
    keep = incoming[~np.isin(incoming, skip)]
    return float(np.prod(factors[keep]))


def dmp_forward_batch(
    directed: DirectedEdges,
    alpha_dir: np.ndarray,
    pbar: np.ndarray,
    horizon: int,
    fast: bool = True,
    counters: KernelCounters | None = None,
) -> DmpBatch:
    """Run DMP for every row of ``pbar`` (shape ``(S, n)``)."""
    if horizon < 1:
        raise SimulationError(f"Horizon must be >= 1, got {horizon}")
    pbar = np.atleast_2d(np.asarray(pbar, dtype=float))
    count = pbar.shape[0]
    stay = 1.0 - pbar
    marginals = np.empty((horizon + 1, count, directed.n))
    messages = np.empty((horizon + 1, count, directed.count))
    marginals[0] = pbar
    messages[0] = pbar[:, directed.src]
    rev = directed.rev
    for t in range(1, horizon + 1):
        factors = 1.0 - alpha_dir * messages[t - 1]
        inactive = stay * directed.prod_into_dst(factors)
        marginals[t] = 1.0 - inactive
        if not fast:
            messages[t] = _direct_messages(directed, factors, stay)
            continue
        denom = factors[:, rev]
        guarded = denom < GUARD_THRESHOLD
        with np.errstate(divide="ignore", invalid="ignore"):
            messages[t] = 1.0 - inactive[:, directed.src] / np.where(
                guarded, 1.0, denom
            )
        if guarded.any():
            for s, e in zip(*np.nonzero(guarded)):
                src = directed.src[e]
                messages[t, s, e] = 1.0 - stay[s, src] * excluded_product(
                    directed, factors[s], src, e ^ 1
                )
            if counters is not None:
                counters.fallbacks += int(guarded.sum())
        np.clip(messages[t], 0.0, 1.0, out=messages[t])
    if counters is not None:
        counters.message_updates += horizon * count * directed.count
    return DmpBatch(horizon, pbar, marginals, messages, directed)


def _single(
    edge_set: Graph | CandidateEdgeSet,
    params: EdgeParams | np.ndarray,
    init: InitialCondition,
    horizon: int,
    fast: bool,
    counters: KernelCounters | None,
) -> DmpRun:
    directed, alpha_dir = directed_alphas(edge_set, params)
    if len(init.pbar) != directed.n:
        raise SimulationError("Initial condition does not match the node count")
    batch = dmp_forward_batch(directed, alpha_dir, init.pbar[None, :], horizon, fast, counters)
    return batch.run(0)


def dmp_forward(
    edge_set: Graph | CandidateEdgeSet,
    params: EdgeParams | np.ndarray,
    init: InitialCondition,
    horizon: int,
    counters: KernelCounters | None = None,
) -> DmpRun:
    """Reference DMP with per-neighbor cavity products."""
    return _single(edge_set, params, init, horizon, False, counters)


def dmp_forward_fast(
    edge_set: Graph | CandidateEdgeSet,
    params: EdgeParams | np.ndarray,
    init: InitialCondition,
    horizon: int,
    counters: KernelCounters | None = None,
) -> DmpRun:
    """DMP where messages are recovered from marginals by division."""
    return _single(edge_set, params, init, horizon, True, counters)


def activation_marginal(run: DmpRun, node: int, outcome: ActivationOutcome) -> float:
    """Return the DMP probability of one observed outcome of ``node``."""
    if isinstance(outcome, Hidden):
        raise ObservationError("Hidden outcomes have no activation probability")
    lo, hi = encode_outcome(outcome, run.horizon)
    marginal = run.marginals[:, node]

    def extended(t: int) -> float:
        if t < 0:
            return 0.0
        if t > run.horizon:
            return 1.0
        return float(marginal[t])

    return extended(hi) - extended(lo)


def _check_budget(graph: Graph) -> None:
    if 2 * graph.num_edges > BRUTEFORCE_MAX_DIRECTED_EDGES:
        raise BudgetExceededError(
            f"Exhaustive enumeration needs 2|E| <= {BRUTEFORCE_MAX_DIRECTED_EDGES}, "
            f"got {2 * graph.num_edges}; use monte_carlo_marginals instead"
        )


def exact_marginals_bruteforce(
    graph: Graph, params: EdgeParams, seed: int, horizon: int
) -> np.ndarray:
    """Exact ``p_i(t)`` by enumerating every set of open directed edges.

    An IC cascade is a shortest-path front on the subgraph of open edges, so
    ``p_i(t)`` is the probability mass of subsets where ``dist(seed, i) <= t``.
    """
    _check_budget(graph)
    if not 0 <= seed < graph.n:
        raise SimulationError(f"Seed {seed} outside [0, {graph.n})")
    directed, alpha_dir = directed_alphas(graph, params)
    total = 1 << directed.count
    weights = 1 << np.arange(directed.count, dtype=np.int64)
    marginals = np.zeros((horizon + 1, graph.n))
    for start in range(0, total, BRUTEFORCE_BLOCK):
        patterns = np.arange(start, min(start + BRUTEFORCE_BLOCK, total), dtype=np.int64)
        open_edges = (patterns[:, None] & weights) != 0
        prob = np.where(open_edges, alpha_dir, 1.0 - alpha_dir).prod(axis=1)
        active = np.zeros((len(patterns), graph.n), dtype=bool)
        active[:, seed] = True
        marginals[0] += prob @ active
        for t in range(1, horizon + 1):
            fire = open_edges & active[:, directed.src]
            active = active | (directed.sum_into_dst(fire.astype(np.int32)) > 0)
            marginals[t] += prob @ active
    return marginals


@dataclass(frozen=True, eq=False)
class MonteCarloEstimate:
    """Empirical marginals with binomial standard errors."""

    marginals: np.ndarray
    stderr: np.ndarray
    samples: int


def monte_carlo_marginals(
    graph: Graph,
    params: EdgeParams,
    seed: int,
    horizon: int,
    samples: int,
    rng: np.random.Generator,
    block: int = 4096,
) -> MonteCarloEstimate:
    """Estimate ``p_i(t)`` from simulated cascades."""
    if samples < 1:
        raise SimulationError(f"Need at least one sample, got {samples}")
    directed, alpha_dir = directed_alphas(graph, params)
    hits = np.zeros((horizon + 1, graph.n))
    done = 0
    while done < samples:
        size = min(block, samples - done)
        times = simulate_times(directed, alpha_dir, np.full(size, seed), horizon, rng)
        hits += (times[None, :, :] <= np.arange(horizon + 1)[:, None, None]).sum(axis=1)
        done += size
    freq = hits / samples
    return MonteCarloEstimate(freq, np.sqrt(freq * (1.0 - freq) / samples), samples)


def write_marginals(
    path: str | Path, batch: DmpBatch, class_keys: Sequence[object] | None = None
) -> None:
    """Dump marginals as ``class,node,t,p`` rows."""
    steps, count, n = batch.marginals.shape
    keys = list(range(count)) if class_keys is None else list(class_keys)
    frame = pd.DataFrame(
        {
            "class": np.repeat(keys, n * steps) if keys else [],
            "node": np.tile(np.repeat(np.arange(n), steps), count),
            "t": np.tile(np.arange(steps), count * n),
            "p": batch.marginals.transpose(1, 2, 0).ravel(),
        }
    )
    try:
        frame.to_csv(path, index=False)
    except OSError as err:
        _LOGGER.error("Error writing marginals %s. %s", path, err)
        raise DataFormatError(f"Cannot write {path}") from err

