"""
pyslicer.learner
~~~~~~~~~~~~~~~~~~~~
Gradient learning of transmission probabilities through DMP
Licensed under the MIT license.

The objective is the log-probability of every observed outcome under the
DMP marginals. Its gradient is obtained with Lagrange multipliers on the
DMP recursions: node multipliers come straight from the observations and
message multipliers are propagated backwards in time from ``t = T``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path
import time

import numpy as np
import pandas as pd

from .cascade import NoiseSpec, SufficientStats
from .constants import (
    ALPHA_HI,
    ALPHA_LO,
    CLASS_BLOCK,
    DEFAULT_ALPHA_INIT,
    DEFAULT_FD_STEP,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_PRUNE_THRESHOLD,
    DEFAULT_TOLERANCE,
    GUARD_THRESHOLD,
    LOG_FLOOR,
    MAX_BACKTRACKS,
)
from .dmp import DmpBatch, KernelCounters, dmp_forward_batch
from .exceptions import ConfigError, DataFormatError, IncompatibleModeError, LearningError
from .graph import CandidateEdgeSet, DirectedEdges, EdgeParams, Graph, Pair, write_edge_list

_LOGGER = logging.getLogger(__name__)

TRACE_COLUMNS = ["iter", "objective", "max_delta", "active_edges"]


class LearnerMode(str, Enum):
    """Observation regimes the learner understands."""

    BASE = "base"
    SIMPLE = "simple"
    MISSING = "missing"
    NOISY = "noisy"


@dataclass(frozen=True)
class LearnerConfig:
    """Optimizer settings. ``prune_threshold=None`` disables pruning."""

    mode: LearnerMode = LearnerMode.BASE
    learning_rate: float = DEFAULT_LEARNING_RATE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    alpha_init: float = DEFAULT_ALPHA_INIT
    alpha_lo: float = ALPHA_LO
    alpha_hi: float = ALPHA_HI
    prune_threshold: float | None = DEFAULT_PRUNE_THRESHOLD
    log_floor: float = LOG_FLOOR
    fd_step: float = DEFAULT_FD_STEP
    noise: NoiseSpec | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        """Validate settings."""
        object.__setattr__(self, "mode", LearnerMode(self.mode))
        if not 0.0 < self.alpha_lo < self.alpha_hi <= 1.0:
            raise ConfigError(f"Invalid clamp bounds [{self.alpha_lo}, {self.alpha_hi}]")
        if self.learning_rate <= 0 or self.max_iterations < 0 or self.tolerance < 0:
            raise ConfigError("Learning rate must be positive, iterations and tolerance >= 0")
        if self.log_floor <= 0 or self.fd_step <= 0 or self.threads < 1:
            raise ConfigError("Log floor, FD step and threads must be positive")
        if self.mode is LearnerMode.NOISY and self.noise is None:
            raise ConfigError("Noisy mode needs a noise specification")


@dataclass(frozen=True, eq=False)
class LagrangeState:
    """Multipliers of one class block, time-major like DmpBatch."""

    node: np.ndarray
    message: np.ndarray
    hat: np.ndarray


@dataclass(frozen=True, eq=False)
class LearnResult:
    """Outcome of fit()."""

    params: EdgeParams
    surviving: CandidateEdgeSet
    shared_alpha: float | None
    trace: pd.DataFrame
    iterations: int
    converged: bool
    wall_time: float
    counters: KernelCounters = field(default_factory=KernelCounters)


@dataclass(frozen=True)
class FiniteDifference:
    """Analytic against numeric derivative of the objective."""

    analytic: float
    numeric: float
    rel_error: float


def check_compatible(stats: SufficientStats, config: LearnerConfig) -> None:
    """Reject outcomes the selected mode cannot score."""
    if stats.has_intervals and config.mode is not LearnerMode.MISSING:
        raise IncompatibleModeError(
            f"Interval observations need mode 'missing', got '{config.mode.value}'"
        )


@dataclass(frozen=True, eq=False)
class _Rows:
    cls: np.ndarray
    node: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray


def _block_rows(stats: SufficientStats, start: int, stop: int) -> _Rows:
    """Rows of classes ``start..stop-1``; seed rows carry no information."""
    keep = (stats.cls >= start) & (stats.cls < stop)
    keep &= stats.node != stats.class_seeds[stats.cls]
    return _Rows(
        stats.cls[keep] - start,
        stats.node[keep],
        stats.lo[keep],
        stats.hi[keep],
        stats.count[keep],
    )


def _outcome_terms(
    rows: _Rows, batch: DmpBatch, config: LearnerConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``mu`` per row and ``d mu / d p(t)`` for t = 1..T."""
    horizon = batch.horizon
    extended = batch.extended_marginals()
    dmu = np.zeros((len(rows.count), horizon))
    index = np.arange(len(rows.count))
    if config.mode is LearnerMode.NOISY:
        channel = config.noise.channel(horizon)
        single = extended[1:] - extended[:-1]
        observed = rows.hi
        mu = np.einsum("rx,xr->r", channel[observed], single[:, rows.cls, rows.node])
        dmu[:] = channel[observed, 1 : horizon + 1] - channel[observed, 2 : horizon + 2]
        return mu, dmu
    mu = extended[rows.hi + 1, rows.cls, rows.node] - extended[rows.lo + 1, rows.cls, rows.node]
    upper = (rows.hi >= 1) & (rows.hi <= horizon)
    lower = (rows.lo >= 1) & (rows.lo <= horizon)
    dmu[index[upper], rows.hi[upper] - 1] += 1.0
    dmu[index[lower], rows.lo[lower] - 1] -= 1.0
    return mu, dmu


def _score(
    rows: _Rows, batch: DmpBatch, config: LearnerConfig, with_lambda: bool
) -> tuple[float, np.ndarray | None]:
    mu, dmu = _outcome_terms(rows, batch, config)
    valid = mu >= config.log_floor
    value = float(np.sum(rows.count * np.log(np.where(valid, mu, config.log_floor))))
    if not with_lambda:
        return value, None
    coef = np.where(valid, rows.count / np.where(valid, mu, 1.0), 0.0)
    lam = np.zeros(batch.marginals.shape)
    for t in range(1, batch.horizon + 1):
        np.add.at(lam[t], (rows.cls, rows.node), -coef * dmu[:, t - 1])
    return value, lam


def objective(
    stats: SufficientStats, batch: DmpBatch, config: LearnerConfig, start: int = 0
) -> float:
    """Log-likelihood of the classes ``start..start+len(batch)-1``."""
    value, _ = _score(_block_rows(stats, start, start + len(batch)), batch, config, False)
    return value


def lambda_node(
    stats: SufficientStats, batch: DmpBatch, config: LearnerConfig, start: int = 0
) -> np.ndarray:
    """Return ``lambda_i(t) = -dO/dp_i(t)`` with shape ``(T+1, S, n)``; row 0 is zero."""
    _, lam = _score(_block_rows(stats, start, start + len(batch)), batch, config, True)
    return lam


def _cavity_direct(
    directed: DirectedEdges,
    factors: np.ndarray,
    lam_next: np.ndarray,
    stay: np.ndarray,
    edge: int,
) -> np.ndarray:
    """Sum over k != i of ``lambda_{j->k}(t+1) (1-pbar_j) prod_{l != k,i} f_l(t)``."""
    j = directed.dst[edge]
    incoming = directed.incoming[j]
    others = incoming[incoming != edge]
    total = np.zeros(factors.shape[0])
    for k_edge in others:
        rest = others[others != k_edge]
        total += lam_next[:, k_edge ^ 1] * factors[:, rest].prod(axis=1)
    return stay[:, j] * total


def lambda_backward(
    batch: DmpBatch,
    alpha_dir: np.ndarray,
    lam_node: np.ndarray,
    method: str = "fast",
    counters: KernelCounters | None = None,
) -> LagrangeState:
    """Propagate message multipliers from ``lambda(T) = 0`` down to t = 0."""
    if method not in ("fast", "direct"):
        raise LearningError(f"Unknown backward method {method!r}")
    directed = batch.directed
    horizon = batch.horizon
    msg = batch.messages
    stay = 1.0 - batch.pbar
    dst, rev = directed.dst, directed.rev
    lam_msg = np.zeros_like(msg)
    lam_hat = np.zeros_like(batch.marginals)
    for t in range(horizon - 1, -1, -1):
        weighted = lam_msg[t + 1] * (1.0 - msg[t + 1])
        lam_hat[t] = directed.sum_from_src(weighted)
        own = alpha_dir * lam_node[t + 1][:, dst] * (1.0 - msg[t + 1][:, rev])
        factors = 1.0 - alpha_dir * msg[t]
        if method == "direct":
            cavity = np.empty_like(factors)
            for e in range(directed.count):
                cavity[:, e] = _cavity_direct(directed, factors, lam_msg[t + 1], stay, e)
            lam_msg[t] = own + alpha_dir * cavity
            continue
        guarded = factors < GUARD_THRESHOLD
        with np.errstate(divide="ignore", invalid="ignore"):
            cavity = (lam_hat[t][:, dst] - weighted[:, rev]) / np.where(
                guarded, 1.0, factors
            )
        for s, e in zip(*np.nonzero(guarded)):
            cavity[s, e] = _cavity_direct(
                directed, factors[s : s + 1], lam_msg[t + 1][s : s + 1], stay[s : s + 1], e
            )[0]
        lam_msg[t] = own + alpha_dir * cavity
        if counters is not None:
            counters.fallbacks += int(guarded.sum())
    if counters is not None:
        counters.message_updates += horizon * len(batch) * directed.count
    return LagrangeState(lam_node, lam_msg, lam_hat)


def grad_directed(batch: DmpBatch, state: LagrangeState, alpha_dir: np.ndarray) -> np.ndarray:
    """Derivative of the objective with respect to every orientation's alpha."""
    horizon = batch.horizon
    weighted = (state.message[:horizon] * batch.messages[:horizon]).sum(axis=(0, 1))
    return -weighted / alpha_dir


def grad_per_edge(batch: DmpBatch, state: LagrangeState, alpha_dir: np.ndarray) -> np.ndarray:
    """Derivative with respect to each undirected edge's alpha."""
    directed = grad_directed(batch, state, alpha_dir)
    return directed[0::2] + directed[1::2]


def grad_shared(batch: DmpBatch, state: LagrangeState, alpha: float) -> float:
    """Derivative with respect to one alpha shared by every edge."""
    horizon = batch.horizon
    return float(-(state.message[:horizon] * batch.messages[:horizon]).sum() / alpha)


def _blocks(stats: SufficientStats) -> list[tuple[int, int]]:
    return [
        (start, min(start + CLASS_BLOCK, stats.num_classes))
        for start in range(0, stats.num_classes, CLASS_BLOCK)
    ]


def evaluate(
    directed: DirectedEdges,
    alpha_dir: np.ndarray,
    stats: SufficientStats,
    config: LearnerConfig,
    with_gradient: bool = True,
    counters: KernelCounters | None = None,
) -> tuple[float, np.ndarray | None]:
    """Objective and per-orientation gradient summed over every class."""

    def work(bounds: tuple[int, int]) -> tuple[float, np.ndarray | None, KernelCounters]:
        start, stop = bounds
        local = KernelCounters()
        batch = dmp_forward_batch(
            directed,
            alpha_dir,
            stats.initial_conditions(slice(start, stop)),
            stats.horizon,
            True,
            local,
        )
        value, lam = _score(_block_rows(stats, start, stop), batch, config, with_gradient)
        if lam is None:
            return value, None, local
        state = lambda_backward(batch, alpha_dir, lam, counters=local)
        return value, grad_directed(batch, state, alpha_dir), local

    blocks = _blocks(stats)
    if config.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    total = 0.0
    grad = np.zeros(directed.count) if with_gradient else None
    for value, block_grad, local in results:
        total += value
        if grad is not None and block_grad is not None:
            grad += block_grad
        if counters is not None:
            counters.message_updates += local.message_updates
            counters.fallbacks += local.fallbacks
    return total, grad


def _as_candidates(edge_set: Graph | CandidateEdgeSet) -> CandidateEdgeSet:
    if isinstance(edge_set, Graph):
        return CandidateEdgeSet.from_graph(edge_set)
    return edge_set


def _edge_gradient(
    candidates: CandidateEdgeSet,
    alpha: np.ndarray,
    stats: SufficientStats,
    config: LearnerConfig,
    counters: KernelCounters | None = None,
) -> tuple[float, np.ndarray]:
    value, grad = evaluate(
        candidates.graph.directed, np.repeat(alpha, 2), stats, config, True, counters
    )
    per_edge = grad[0::2] + grad[1::2]
    if config.mode is LearnerMode.SIMPLE:
        per_edge = np.full_like(alpha, per_edge.sum())
    return value, per_edge


def fit(
    edge_set: Graph | CandidateEdgeSet,
    stats: SufficientStats,
    config: LearnerConfig | None = None,
) -> LearnResult:
    """Projected gradient ascent on the DMP log-likelihood.

    Each iteration starts from ``config.learning_rate`` times the mean
    per-cascade gradient and halves the step until the objective does not
    drop. In non-shared modes edges whose alpha falls below the prune
    threshold are removed for the rest of the run.
    """
    config = config or LearnerConfig()
    candidates = _as_candidates(edge_set)
    if not len(candidates):
        raise LearningError("Candidate edge set is empty")
    if stats.n != candidates.n:
        raise LearningError(f"Statistics on {stats.n} nodes, candidates on {candidates.n}")
    if stats.num_cascades == 0:
        raise LearningError("No cascades to learn from")
    check_compatible(stats, config)
    if (
        config.mode is LearnerMode.SIMPLE
        and candidates.truth_mask is not None
        and not candidates.truth_mask.all()
    ):
        raise IncompatibleModeError("Shared alpha is learned over true edges only, got fakes")

    started = time.perf_counter()
    counters = KernelCounters()
    shared = config.mode is LearnerMode.SIMPLE
    active = candidates
    initial = float(np.clip(config.alpha_init, config.alpha_lo, config.alpha_hi))
    alpha = np.full(len(active), initial)
    scale = 1.0 / stats.num_cascades
    value, grad = _edge_gradient(active, alpha, stats, config, counters)
    trace = [(0, value, float("nan"), len(active))]
    converged = False
    iteration = 0
    _LOGGER.debug(
        "Learning %s candidate edges from %s cascades in %s classes, mode %s",
        len(active),
        stats.num_cascades,
        stats.num_classes,
        config.mode.value,
    )

    for iteration in range(1, config.max_iterations + 1):
        if not np.all(np.isfinite(grad)):
            raise LearningError(f"Non-finite gradient at iteration {iteration}")
        step = config.learning_rate
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            trial = np.clip(alpha + step * scale * grad, config.alpha_lo, config.alpha_hi)
            trial_value, trial_grad = _edge_gradient(active, trial, stats, config, counters)
            if np.isfinite(trial_value) and trial_value >= value - 1e-12:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            _LOGGER.debug("No ascent step found at iteration %s", iteration)
            trace.append((iteration, value, 0.0, len(active)))
            converged = True
            break

        delta = float(np.max(np.abs(trial - alpha)))
        alpha, value, grad = trial, trial_value, trial_grad

        if config.prune_threshold is not None and not shared:
            keep = alpha >= config.prune_threshold
            if not keep.any():
                raise LearningError(f"Every candidate edge pruned at iteration {iteration}")
            if not keep.all():
                _LOGGER.debug(
                    "Iteration %s: pruning %s edges, %s remain",
                    iteration,
                    int((~keep).sum()),
                    int(keep.sum()),
                )
                active = active.subset(keep)
                alpha = alpha[keep]
                value, grad = _edge_gradient(active, alpha, stats, config, counters)

        trace.append((iteration, value, delta, len(active)))
        _LOGGER.debug(
            "Iteration %s: objective %.10g, step %.3g, max delta %.3g",
            iteration,
            value,
            step,
            delta,
        )
        if delta < config.tolerance:
            converged = True
            break

    learned = dict(zip(active.edges, alpha.tolist()))
    params = EdgeParams(
        candidates.edges, np.array([learned.get(pair, 0.0) for pair in candidates.edges])
    )
    wall_time = time.perf_counter() - started
    _LOGGER.info(
        "Learning finished after %s iterations (converged=%s) in %.2fs, %s edges kept",
        iteration,
        converged,
        wall_time,
        len(active),
    )
    return LearnResult(
        params,
        active,
        float(alpha[0]) if shared else None,
        pd.DataFrame(trace, columns=TRACE_COLUMNS),
        iteration,
        converged,
        wall_time,
        counters,
    )


def _alpha_vector(candidates: CandidateEdgeSet, params: EdgeParams | np.ndarray) -> np.ndarray:
    if isinstance(params, EdgeParams):
        return params.aligned(candidates.edges)
    return np.asarray(params, dtype=float).copy()


def finite_difference_check(
    edge_set: Graph | CandidateEdgeSet,
    stats: SufficientStats,
    params: EdgeParams | np.ndarray,
    config: LearnerConfig | None = None,
    edge: Pair | int | None = None,
    step: float | None = None,
) -> FiniteDifference:
    """Compare the analytic gradient with a central difference.

    ``edge=None`` moves every alpha together, which is the shared-parameter
    derivative.
    """
    config = config or LearnerConfig()
    candidates = _as_candidates(edge_set)
    check_compatible(stats, config)
    step = config.fd_step if step is None else step
    alpha = _alpha_vector(candidates, params)
    if edge is None:
        direction = np.ones_like(alpha)
    else:
        index = edge if isinstance(edge, int) else candidates.graph.edge_index(*edge)
        direction = np.zeros_like(alpha)
        direction[index] = 1.0
    moved = alpha[direction > 0]
    if step <= 0 or moved.min() - step <= 0.0 or moved.max() + step >= 1.0:
        raise LearningError(f"alpha +/- {step} must stay inside (0, 1)")

    directed = candidates.graph.directed
    _, grad = evaluate(directed, np.repeat(alpha, 2), stats, config)
    analytic = float(((grad[0::2] + grad[1::2]) * direction).sum())
    plus, _ = evaluate(directed, np.repeat(alpha + step * direction, 2), stats, config, False)
    minus, _ = evaluate(directed, np.repeat(alpha - step * direction, 2), stats, config, False)
    numeric = (plus - minus) / (2.0 * step)
    scale = max(abs(analytic), abs(numeric))
    rel_error = abs(analytic - numeric) / scale if scale > 0 else 0.0
    return FiniteDifference(analytic, numeric, rel_error)


def _node_derivative_reference(
    stats: SufficientStats, batch: DmpBatch, config: LearnerConfig
) -> np.ndarray:
    """dO/dp_i(t) accumulated observation by observation."""
    horizon = batch.horizon
    out = np.zeros(batch.marginals.shape)
    channel = config.noise.channel(horizon) if config.mode is LearnerMode.NOISY else None

    def extended(cls: int, node: int, t: int) -> float:
        if t < 0:
            return 0.0
        if t > horizon:
            return 1.0
        return float(batch.marginals[t, cls, node])

    for r in range(len(stats.count)):
        cls, node = int(stats.cls[r]), int(stats.node[r])
        if node == stats.class_seeds[cls]:
            continue
        lo, hi, count = int(stats.lo[r]), int(stats.hi[r]), float(stats.count[r])
        if channel is None:
            mu = extended(cls, node, hi) - extended(cls, node, lo)
            if mu < config.log_floor:
                continue
            if 1 <= hi <= horizon:
                out[hi, cls, node] += count / mu
            if 1 <= lo <= horizon:
                out[lo, cls, node] -= count / mu
            continue
        mu = sum(
            channel[hi, x] * (extended(cls, node, x) - extended(cls, node, x - 1))
            for x in range(horizon + 2)
        )
        if mu < config.log_floor:
            continue
        for t in range(1, horizon + 1):
            out[t, cls, node] += count / mu * (channel[hi, t] - channel[hi, t + 1])
    return out


def stationarity_residuals(
    edge_set: Graph | CandidateEdgeSet,
    params: EdgeParams | np.ndarray,
    stats: SufficientStats,
    config: LearnerConfig | None = None,
) -> tuple[float, float]:
    """Largest violation of dL/dp_i(t) = 0 and dL/dp_{i->j}(t) = 0.

    Multipliers come from the fast backward pass; the message residual is
    measured against the cavity sums written out term by term.
    """
    config = config or LearnerConfig()
    candidates = _as_candidates(edge_set)
    check_compatible(stats, config)
    directed, alpha_dir = candidates.graph.directed, np.repeat(
        _alpha_vector(candidates, params), 2
    )
    batch = dmp_forward_batch(directed, alpha_dir, stats.initial_conditions(), stats.horizon)
    lam = lambda_node(stats, batch, config)
    state = lambda_backward(batch, alpha_dir, lam)

    node_residual = lam + _node_derivative_reference(stats, batch, config)
    node_max = float(np.abs(node_residual[1:]).max(initial=0.0))

    horizon = batch.horizon
    stay = 1.0 - batch.pbar
    msg = batch.messages
    msg_max = float(np.abs(state.message[horizon]).max(initial=0.0))
    for t in range(horizon):
        factors = 1.0 - alpha_dir * msg[t]
        for e in range(directed.count):
            j = directed.dst[e]
            expected = alpha_dir[e] * lam[t + 1][:, j] * (1.0 - msg[t + 1][:, e ^ 1])
            expected = expected + alpha_dir[e] * _cavity_direct(
                directed, factors, state.message[t + 1], stay, e
            )
            msg_max = max(msg_max, float(np.abs(state.message[t][:, e] - expected).max()))
    return node_max, msg_max


def write_trace(
    path: str | Path, result: LearnResult, metadata: dict[str, object] | None = None
) -> None:
    """Write the objective trace as ``iter,objective,max_delta,active_edges``."""
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for key, value in (metadata or {}).items():
                handle.write(f"# {key}={value}\n")
            result.trace.to_csv(handle, index=False, columns=TRACE_COLUMNS)
    except OSError as err:
        _LOGGER.error("Error writing trace %s. %s", path, err)
        raise DataFormatError(f"Cannot write {path}") from err


def write_learned(
    path: str | Path,
    result: LearnResult,
    candidates: CandidateEdgeSet,
    metadata: dict[str, object] | None = None,
) -> None:
    """Write learned alphas over the initial candidates; pruned edges get 0."""
    header: dict[str, object] = dict(metadata or {})
    if result.shared_alpha is not None:
        header["shared_alpha"] = repr(result.shared_alpha)
    header["iterations"] = result.iterations
    header["converged"] = int(result.converged)
    write_edge_list(
        path,
        candidates.n,
        candidates.edges,
        result.params,
        candidates.truth_mask,
        header,
    )

