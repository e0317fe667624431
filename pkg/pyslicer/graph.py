"""
pyslicer.graph
~~~~~~~~~~~~~~~~~~~~
Graphs, candidate edge sets, generators and transmission parameters
Licensed under the MIT license.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
import itertools
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import networkx as nx
import numpy as np

from .constants import GENERATOR_RETRIES
from .exceptions import DataFormatError, GraphError

_LOGGER = logging.getLogger(__name__)

Pair = tuple[int, int]


def normalize_pair(i: int, j: int) -> Pair:
    """Return the unordered pair (i, j) with i < j."""
    return (i, j) if i < j else (j, i)


def _seed_from(rng: np.random.Generator) -> int:
    """Draw an integer seed for networkx from a numpy generator."""
    return int(rng.integers(2**32))


@dataclass(frozen=True, eq=False)
class DirectedEdges:
    """Both orientations of every undirected edge, laid out for array kernels.

    Orientation ``2k`` is ``edges[k][0] -> edges[k][1]`` and ``2k + 1`` is the
    reverse, so the reverse of orientation ``e`` is always ``e ^ 1``.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    _dst_order: np.ndarray = field(repr=False)
    _dst_nodes: np.ndarray = field(repr=False)
    _dst_starts: np.ndarray = field(repr=False)
    _src_order: np.ndarray = field(repr=False)
    _src_nodes: np.ndarray = field(repr=False)
    _src_starts: np.ndarray = field(repr=False)

    @classmethod
    def from_pairs(cls, n: int, pairs: Sequence[Pair]) -> DirectedEdges:
        """Build the directed layout for a list of unordered pairs."""
        pairs_arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        src = np.empty(2 * len(pairs_arr), dtype=np.int64)
        dst = np.empty_like(src)
        src[0::2], dst[0::2] = pairs_arr[:, 0], pairs_arr[:, 1]
        src[1::2], dst[1::2] = pairs_arr[:, 1], pairs_arr[:, 0]

        def segments(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            order = np.argsort(keys, kind="stable")
            nodes, starts = np.unique(keys[order], return_index=True)
            return order, nodes, starts

        dst_order, dst_nodes, dst_starts = segments(dst)
        src_order, src_nodes, src_starts = segments(src)
        return cls(
            n,
            src,
            dst,
            dst_order,
            dst_nodes,
            dst_starts,
            src_order,
            src_nodes,
            src_starts,
        )

    @property
    def count(self) -> int:
        """Return the number of directed edges."""
        return len(self.src)

    @property
    def rev(self) -> np.ndarray:
        """Return the index of the reverse orientation of every edge."""
        return np.arange(self.count) ^ 1

    def prod_into_dst(self, values: np.ndarray) -> np.ndarray:
        """Multiply edge values (last axis) into their destination nodes."""
        out = np.ones(values.shape[:-1] + (self.n,))
        if self.count:
            out[..., self._dst_nodes] = np.multiply.reduceat(
                values[..., self._dst_order], self._dst_starts, axis=-1
            )
        return out

    def sum_into_dst(self, values: np.ndarray) -> np.ndarray:
        """Sum edge values (last axis) into their destination nodes."""
        out = np.zeros(values.shape[:-1] + (self.n,), dtype=values.dtype)
        if self.count:
            out[..., self._dst_nodes] = np.add.reduceat(
                values[..., self._dst_order], self._dst_starts, axis=-1
            )
        return out

    def sum_from_src(self, values: np.ndarray) -> np.ndarray:
        """Sum edge values (last axis) into their source nodes."""
        out = np.zeros(values.shape[:-1] + (self.n,), dtype=values.dtype)
        if self.count:
            out[..., self._src_nodes] = np.add.reduceat(
                values[..., self._src_order], self._src_starts, axis=-1
            )
        return out

    @cached_property
    def incoming(self) -> tuple[np.ndarray, ...]:
        """Return, per node, the indices of edges pointing into it."""
        buckets: list[list[int]] = [[] for _ in range(self.n)]
        for e, j in enumerate(self.dst.tolist()):
            buckets[j].append(e)
        return tuple(np.asarray(b, dtype=np.int64) for b in buckets)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``."""

    n: int
    edges: tuple[Pair, ...]

    def __post_init__(self) -> None:
        """Validate graph invariants."""
        if self.n < 0:
            raise GraphError(f"Node count must be non-negative, got {self.n}")
        previous: Pair | None = None
        for pair in self.edges:
            i, j = pair
            if not 0 <= i < j < self.n:
                raise GraphError(f"Invalid edge {pair} for n={self.n}")
            if previous is not None and pair <= previous:
                raise GraphError(f"Edges must be sorted and unique, got {pair}")
            previous = pair

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.n, self.edges))

    @property
    def num_edges(self) -> int:
        """Return the number of undirected edges."""
        return len(self.edges)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        """Return the sorted neighbor list of every node."""
        neighbors: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        return tuple(tuple(sorted(nbrs)) for nbrs in neighbors)

    @cached_property
    def directed(self) -> DirectedEdges:
        """Return the directed-edge layout used by the kernels."""
        return DirectedEdges.from_pairs(self.n, self.edges)

    @cached_property
    def _edge_index(self) -> dict[Pair, int]:
        return {pair: k for k, pair in enumerate(self.edges)}

    def neighbors(self, node: int) -> tuple[int, ...]:
        """Return the neighbors of a node."""
        return self.adjacency[node]

    def degrees(self) -> np.ndarray:
        """Return the degree of every node."""
        return np.array([len(nbrs) for nbrs in self.adjacency], dtype=np.int64)

    def has_edge(self, i: int, j: int) -> bool:
        """Return if (i, j) is an edge."""
        return normalize_pair(i, j) in self._edge_index

    def edge_index(self, i: int, j: int) -> int:
        """Return the position of edge (i, j) in ``edges``."""
        try:
            return self._edge_index[normalize_pair(i, j)]
        except KeyError as err:
            raise GraphError(f"({i}, {j}) is not an edge") from err

    def to_networkx(self) -> nx.Graph:
        """Return the graph as a networkx graph."""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph


def build_graph(n: int, edges: Iterable[Sequence[int]]) -> Graph:
    """Build a graph, dropping duplicate edges and rejecting invalid ones."""
    unique: set[Pair] = set()
    for pair in edges:
        i, j = int(pair[0]), int(pair[1])
        if i == j:
            raise GraphError(f"Self-loop {tuple(pair)} is not allowed")
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"Edge {tuple(pair)} is out of range for n={n}")
        unique.add(normalize_pair(i, j))
    return Graph(n, tuple(sorted(unique)))


def from_networkx(graph: nx.Graph) -> Graph:
    """Convert a networkx graph with integer labels ``0..n-1``."""
    return build_graph(graph.number_of_nodes(), graph.edges())


@dataclass(frozen=True, eq=False)
class EdgeParams:
    """Transmission probability per undirected edge."""

    edges: tuple[Pair, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        """Validate parameters."""
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.edges),):
            raise GraphError(
                f"Expected {len(self.edges)} parameters, got shape {values.shape}"
            )
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise GraphError("Transmission probabilities must lie in [0, 1]")
        if len(set(self.edges)) != len(self.edges):
            raise GraphError("Duplicate edge in parameters")

    @classmethod
    def constant(cls, edges: Sequence[Pair], value: float) -> EdgeParams:
        """Return the same value on every edge."""
        return cls(tuple(edges), np.full(len(edges), float(value)))

    @cached_property
    def _lookup(self) -> dict[Pair, float]:
        return {pair: float(v) for pair, v in zip(self.edges, self.values)}

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, pair: object) -> bool:
        if not isinstance(pair, tuple) or len(pair) != 2:
            return False
        return normalize_pair(*pair) in self._lookup

    def __getitem__(self, pair: Pair) -> float:
        try:
            return self._lookup[normalize_pair(*pair)]
        except KeyError as err:
            raise GraphError(f"No parameter for edge {pair}") from err

    def get(self, pair: Pair, default: float = 0.0) -> float:
        """Return the value of an edge or a default."""
        return self._lookup.get(normalize_pair(*pair), default)

    def as_dict(self) -> dict[Pair, float]:
        """Return a copy of the parameters as a dict."""
        return dict(self._lookup)

    def aligned(self, edges: Sequence[Pair]) -> np.ndarray:
        """Return the values in the order of ``edges``; every edge must be present."""
        try:
            return np.array([self._lookup[pair] for pair in edges], dtype=float)
        except KeyError as err:
            raise GraphError(f"No parameter for candidate edge {err.args[0]}") from err

    def restrict(self, edges: Sequence[Pair], fill: float = 0.0) -> EdgeParams:
        """Return parameters on ``edges``, using ``fill`` for missing ones."""
        return EdgeParams(
            tuple(edges), np.array([self.get(pair, fill) for pair in edges])
        )


@dataclass(frozen=True, eq=False)
class CandidateEdgeSet:
    """Super-set of possible edges, optionally flagged as true or fake."""

    n: int
    edges: tuple[Pair, ...]
    truth_mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        """Validate the candidate set against a graph on the same nodes."""
        Graph(self.n, self.edges)
        if self.truth_mask is not None:
            mask = np.asarray(self.truth_mask, dtype=bool)
            object.__setattr__(self, "truth_mask", mask)
            if mask.shape != (len(self.edges),):
                raise GraphError("Truth mask does not match the candidate edges")

    @classmethod
    def from_graph(cls, graph: Graph) -> CandidateEdgeSet:
        """Return a candidate set made of exactly the graph's edges."""
        return cls(graph.n, graph.edges, np.ones(graph.num_edges, dtype=bool))

    @cached_property
    def graph(self) -> Graph:
        """Return the candidate set as a graph."""
        return Graph(self.n, self.edges)

    def __len__(self) -> int:
        return len(self.edges)

    def truth_edges(self) -> tuple[Pair, ...]:
        """Return the edges flagged as true."""
        if self.truth_mask is None:
            raise GraphError("Candidate set carries no truth flags")
        return tuple(pair for pair, flag in zip(self.edges, self.truth_mask) if flag)

    @property
    def fake_fraction(self) -> float:
        """Return the fraction of candidate edges that are fake."""
        if self.truth_mask is None or not self.edges:
            return float("nan")
        return float(1.0 - self.truth_mask.mean())

    def subset(self, keep: np.ndarray) -> CandidateEdgeSet:
        """Return the candidates selected by a boolean mask."""
        keep = np.asarray(keep, dtype=bool)
        edges = tuple(pair for pair, flag in zip(self.edges, keep) if flag)
        mask = None if self.truth_mask is None else self.truth_mask[keep]
        return CandidateEdgeSet(self.n, edges, mask)


@dataclass(frozen=True)
class Uniform:
    """Uniform parameter distribution on [low, high]."""

    low: float
    high: float


@dataclass(frozen=True)
class Constant:
    """Degenerate parameter distribution."""

    value: float


ParamDistribution = Union[Uniform, Constant]


def parse_distribution(text: str) -> ParamDistribution:
    """Parse ``uniform:a,b`` or ``constant:c``."""
    kind, _, args = text.strip().partition(":")
    try:
        values = [float(v) for v in args.split(",")] if args else []
    except ValueError as err:
        raise GraphError(f"Invalid distribution arguments in {text!r}") from err
    if kind == "uniform" and len(values) == 2:
        return Uniform(values[0], values[1])
    if kind == "constant" and len(values) == 1:
        return Constant(values[0])
    raise GraphError(f"Unknown parameter distribution {text!r}")


def format_distribution(dist: ParamDistribution) -> str:
    """Inverse of parse_distribution."""
    if isinstance(dist, Uniform):
        return f"uniform:{dist.low!r},{dist.high!r}"
    return f"constant:{dist.value!r}"


def _edges_of(edge_set: Graph | CandidateEdgeSet | Sequence[Pair]) -> tuple[Pair, ...]:
    if isinstance(edge_set, (Graph, CandidateEdgeSet)):
        return edge_set.edges
    return tuple(normalize_pair(int(i), int(j)) for i, j in edge_set)


def sample_params(
    edge_set: Graph | CandidateEdgeSet | Sequence[Pair],
    dist: ParamDistribution,
    rng: np.random.Generator,
) -> EdgeParams:
    """Draw one transmission probability per edge."""
    edges = _edges_of(edge_set)
    if isinstance(dist, Constant):
        if not 0.0 <= dist.value <= 1.0:
            raise GraphError(f"Constant {dist.value} outside [0, 1]")
        return EdgeParams.constant(edges, dist.value)
    if not 0.0 <= dist.low <= dist.high <= 1.0:
        raise GraphError(f"Invalid uniform range [{dist.low}, {dist.high}]")
    return EdgeParams(edges, rng.uniform(dist.low, dist.high, size=len(edges)))


def gen_regular_tree(
    branching: int, n: int, rng: np.random.Generator | None = None
) -> Graph:
    """Grow a tree breadth-first where internal nodes have degree ``branching``.

    The root gets ``branching`` children and every other internal node
    ``branching - 1``; the last internal node may be cut short. When ``rng`` is
    given the node labels are shuffled.
    """
    if branching < 2 or n < 1:
        raise GraphError(f"Need branching >= 2 and n >= 1, got {branching}, {n}")
    edges: list[Pair] = []
    queue = deque([0])
    next_id = 1
    while next_id < n:
        parent = queue.popleft()
        for _ in range(branching if parent == 0 else branching - 1):
            if next_id >= n:
                break
            edges.append((parent, next_id))
            queue.append(next_id)
            next_id += 1
    if rng is not None:
        labels = rng.permutation(n)
        edges = [(int(labels[i]), int(labels[j])) for i, j in edges]
    return build_graph(n, edges)


def gen_random_regular(n: int, k: int, rng: np.random.Generator) -> Graph:
    """Uniform k-regular simple graph from the pairing model."""
    if k < 0 or k >= n or (n * k) % 2:
        raise GraphError(f"No simple {k}-regular graph on {n} nodes")
    last_err: Exception | None = None
    for _ in range(GENERATOR_RETRIES):
        try:
            graph = nx.random_regular_graph(k, n, seed=_seed_from(rng))
        except nx.NetworkXError as err:
            last_err = err
            continue
        return from_networkx(graph)
    raise GraphError(f"Could not build a {k}-regular graph on {n} nodes") from last_err


def gen_erdos_renyi(n: int, avg_degree: float, rng: np.random.Generator) -> Graph:
    """G(n, m) graph with m = round(n * avg_degree / 2) edges."""
    if not 0 < avg_degree <= n - 1:
        raise GraphError(f"Average degree {avg_degree} impossible on {n} nodes")
    m = int(round(n * avg_degree / 2))
    return from_networkx(nx.gnm_random_graph(n, m, seed=_seed_from(rng)))


def gen_barabasi_albert(
    n: int, m_per_node: float, rng: np.random.Generator
) -> Graph:
    """Preferential attachment with a possibly fractional number of links.

    A fractional ``m_per_node`` alternates between its floor and ceiling so
    that, for example, 1.5 gives an average degree close to 3.
    Growth starts from a star joining node 0 to nodes 1..ceil(m).
    """
    m_max = math.ceil(m_per_node)
    if m_per_node < 1 or n <= m_max:
        raise GraphError(f"Need m >= 1 and n > m, got m={m_per_node}, n={n}")
    edges: list[Pair] = [(0, k) for k in range(1, m_max + 1)]
    repeated: list[int] = [0] * m_max + list(range(1, m_max + 1))
    for step, node in enumerate(range(m_max + 1, n), start=1):
        links = math.ceil(step * m_per_node) - math.ceil((step - 1) * m_per_node)
        targets: set[int] = set()
        while len(targets) < links:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for target in sorted(targets):
            edges.append((target, node))
            repeated.append(target)
        repeated.extend([node] * links)
    return build_graph(n, edges)


def gen_lattice_with_diagonals(
    side: int, rng: np.random.Generator | None = None
) -> tuple[Graph, CandidateEdgeSet]:
    """Open square lattice plus one fake diagonal per unit cell.

    Diagonal orientation is drawn per cell when ``rng`` is given, otherwise
    every cell gets the top-left to bottom-right diagonal.
    """
    if side < 2:
        raise GraphError(f"Lattice side must be >= 2, got {side}")
    lattice = nx.grid_2d_graph(side, side)
    truth = build_graph(
        side * side,
        (
            (r1 * side + c1, r2 * side + c2)
            for (r1, c1), (r2, c2) in lattice.edges()
        ),
    )
    diagonals: list[Pair] = []
    for r in range(side - 1):
        for c in range(side - 1):
            if rng is not None and rng.random() < 0.5:
                diagonals.append((r * side + c + 1, (r + 1) * side + c))
            else:
                diagonals.append((r * side + c, (r + 1) * side + c + 1))
    superset = tuple(sorted(set(truth.edges) | {normalize_pair(*d) for d in diagonals}))
    truth_set = set(truth.edges)
    mask = np.array([pair in truth_set for pair in superset])
    candidates = CandidateEdgeSet(truth.n, superset, mask)
    _LOGGER.debug(
        "Lattice side=%s: %s true, %s fake (%.3f fake fraction)",
        side,
        truth.num_edges,
        len(diagonals),
        candidates.fake_fraction,
    )
    return truth, candidates


def _merge_candidates(truth: Graph, extra: Iterable[Pair]) -> CandidateEdgeSet:
    truth_set = set(truth.edges)
    superset = tuple(sorted(truth_set | set(extra)))
    mask = np.array([pair in truth_set for pair in superset], dtype=bool)
    return CandidateEdgeSet(truth.n, superset, mask)


def superset_with_fake_edges(
    truth: Graph, fake_ratio: float, rng: np.random.Generator
) -> CandidateEdgeSet:
    """Add ceil(fake_ratio * |E|) uniformly chosen non-edges to the truth."""
    if fake_ratio < 0:
        raise GraphError(f"Fake ratio must be non-negative, got {fake_ratio}")
    needed = math.ceil(fake_ratio * truth.num_edges - 1e-9)
    rows, cols = np.triu_indices(truth.n, k=1)
    adjacency = np.zeros((truth.n, truth.n), dtype=bool)
    if truth.edges:
        pairs = np.asarray(truth.edges)
        adjacency[pairs[:, 0], pairs[:, 1]] = True
    free = ~adjacency[rows, cols]
    available = int(free.sum())
    if needed > available:
        raise GraphError(
            f"Need {needed} fake edges but only {available} non-edges exist"
        )
    chosen = rng.choice(available, size=needed, replace=False) if needed else []
    fake_rows, fake_cols = rows[free][chosen], cols[free][chosen]
    return _merge_candidates(
        truth, zip(np.asarray(fake_rows).tolist(), np.asarray(fake_cols).tolist())
    )


def superset_complete(truth: Graph) -> CandidateEdgeSet:
    """Every unordered pair is a candidate."""
    return _merge_candidates(truth, itertools.combinations(range(truth.n), 2))


def gen_karate_club() -> Graph:
    """Zachary's karate club network (34 nodes, 78 edges)."""
    return from_networkx(nx.karate_club_graph())


@dataclass
class EdgeListFile:
    """Parsed contents of an edge-list file."""

    n: int
    edges: list[Pair]
    alphas: list[float | None]
    truth_flags: list[bool] | None
    metadata: dict[str, str]

    def graph(self) -> Graph:
        """Return the edges as a graph."""
        return build_graph(self.n, self.edges)

    def params(self) -> EdgeParams | None:
        """Return the alpha column, if every row carries one."""
        if not self.alphas or any(a is None for a in self.alphas):
            return None
        pairs = [normalize_pair(*p) for p in self.edges]
        return EdgeParams(tuple(pairs), np.array(self.alphas, dtype=float)).restrict(
            sorted(set(pairs))
        )

    def candidates(self) -> CandidateEdgeSet:
        """Return the edges as a candidate set."""
        graph = self.graph()
        if self.truth_flags is None:
            return CandidateEdgeSet(graph.n, graph.edges)
        flags = {normalize_pair(*p): f for p, f in zip(self.edges, self.truth_flags)}
        return CandidateEdgeSet(
            graph.n, graph.edges, np.array([flags[p] for p in graph.edges])
        )


def write_edge_list(
    path: str | Path,
    n: int,
    edges: Sequence[Pair],
    params: EdgeParams | None = None,
    truth_mask: np.ndarray | None = None,
    metadata: dict[str, Any] | None = None,
) -> None:
    """Write ``i<TAB>j[<TAB>alpha][<TAB>flag]`` lines under a ``# n=`` header."""
    lines = [f"# n={n}"]
    lines.extend(f"# {key}={value}" for key, value in (metadata or {}).items())
    for k, (i, j) in enumerate(edges):
        row = [str(i), str(j)]
        if params is not None or truth_mask is not None:
            row.append(repr(params.get((i, j))) if params is not None else "-")
        if truth_mask is not None:
            row.append("1" if truth_mask[k] else "0")
        lines.append("\t".join(row))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as err:
        _LOGGER.error("Error writing edge list %s. %s", path, err)
        raise DataFormatError(f"Cannot write {path}") from err


def read_edge_list(path: str | Path) -> EdgeListFile:
    """Read an edge-list file written by write_edge_list."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        _LOGGER.error("Error reading edge list %s. %s", path, err)
        raise DataFormatError(f"Cannot read {path}") from err

    n: int | None = None
    metadata: dict[str, str] = {}
    edges: list[Pair] = []
    alphas: list[float | None] = []
    flags: list[bool] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "n":
                n = int(value)
            else:
                metadata[key] = value
            continue
        cols = line.split("\t")
        try:
            edges.append((int(cols[0]), int(cols[1])))
            if len(cols) >= 3:
                alphas.append(None if cols[2] == "-" else float(cols[2]))
            if len(cols) >= 4:
                flags.append(cols[3].strip() == "1")
        except (ValueError, IndexError) as err:
            raise DataFormatError(f"{path}:{lineno}: malformed edge {line!r}") from err
    if n is None:
        raise DataFormatError(f"{path}: missing '# n=<count>' header")
    if flags and len(flags) != len(edges):
        raise DataFormatError(f"{path}: truth flag missing on some rows")
    return EdgeListFile(n, edges, alphas, flags or None, metadata)
