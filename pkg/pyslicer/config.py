"""
pyslicer.config
~~~~~~~~~~~~~~~~~~~~
Experiment configuration from flat ``section.key = value`` files
Licensed under the MIT license.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import logging
from pathlib import Path
from typing import Mapping

import numpy as np

from .cascade import NoiseSpec, ObservationModel, SeedPolicy, random_time_grid
from .constants import CONFIG_HASH_LENGTH
from .exceptions import BaseSlicerError, ConfigError
from .graph import ParamDistribution, parse_distribution
from .learner import LearnerConfig, LearnerMode

_LOGGER = logging.getLogger(__name__)

DEFAULTS: dict[str, str] = {
    "graph.type": "er",
    "graph.n": "100",
    "graph.avg_degree": "3",
    "graph.degree": "3",
    "graph.m": "1.5",
    "graph.side": "10",
    "graph.path": "",
    "graph.superset": "none",
    "params.dist": "uniform:0,1",
    "sim.cascades": "1000",
    "sim.horizon": "5",
    "sim.seed_policy": "uniform_random",
    "obs.hidden": "0",
    "obs.times": "full",
    "obs.noise": "none",
    "learn.mode": "base",
    "learn.rate": "0.1",
    "learn.max_iter": "2000",
    "learn.tol": "1e-06",
    "learn.alpha_init": "0.5",
    "learn.prune": "1e-08",
    "learn.drop_intervals": "false",
    "sweep.cascades": "10,100,1000",
    "sweep.hidden": "0,0.5",
    "sweep.networks": "1",
    "sweep.draws": "1",
    "run.seed": "0",
    "run.output": "results",
}

GRAPH_TYPES = ("er", "rr", "tree", "ba", "lattice-diag", "karate", "file")


def stable_hash(text: str, length: int = CONFIG_HASH_LENGTH) -> str:
    """Short sha1 digest of a string."""
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:length]


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        values[key.strip()] = value.strip()
    return values


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class GraphSpec:
    """Which network to build and which candidate edges to learn over."""

    kind: str
    n: int
    avg_degree: float
    degree: int
    m: float
    side: int
    path: str
    superset: str

    def describe(self) -> dict[str, object]:
        """Return the generator parameters relevant to ``kind``."""
        relevant = {
            "er": ("n", "avg_degree"),
            "rr": ("n", "degree"),
            "tree": ("n", "degree"),
            "ba": ("n", "m"),
            "lattice-diag": ("side",),
            "karate": (),
            "file": ("path",),
        }[self.kind]
        return {"generator": self.kind, **{key: getattr(self, key) for key in relevant}}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every setting of an experiment as flat string values plus typed views."""

    values: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Merge defaults, reject unknown keys and validate every value."""
        unknown = sorted(set(self.values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        object.__setattr__(self, "values", {**DEFAULTS, **self.values})
        try:
            self._validate()
        except ConfigError:
            raise
        except (ValueError, BaseSlicerError) as err:
            raise ConfigError(f"Invalid configuration: {err}") from err

    def _validate(self) -> None:
        graph = self.graph
        if graph.kind not in GRAPH_TYPES:
            raise ConfigError(f"Unknown graph type {graph.kind!r}, expected one of {GRAPH_TYPES}")
        if graph.kind == "file" and not Path(graph.path).is_file():
            raise ConfigError(f"Graph file {graph.path!r} does not exist")
        superset = graph.superset
        if not (
            superset in ("none", "complete", "diagonals") or superset.startswith("fake:")
        ):
            raise ConfigError(f"Unknown superset {superset!r}")
        if superset == "diagonals" and graph.kind != "lattice-diag":
            raise ConfigError("The diagonals superset only exists for lattice-diag graphs")
        if superset.startswith("fake:"):
            float(superset[5:])
        _ = (self.distribution, self.seed_policy, self.noise, self.learner())
        _bool(self.values["learn.drop_intervals"])
        times = self.values["obs.times"]
        if times.startswith("random:"):
            float(times[7:])
        elif times != "full":
            _ints(times)
        if self.cascades < 1 or self.horizon < 1:
            raise ConfigError("sim.cascades and sim.horizon must be >= 1")
        if not 0.0 <= self.hidden_fraction <= 1.0:
            raise ConfigError(f"obs.hidden {self.hidden_fraction} outside [0, 1]")
        if not self.sweep_cascades or not self.sweep_hidden:
            raise ConfigError("Sweep axes must not be empty")
        if min(self.sweep_cascades) < 1 or not all(0 <= x <= 1 for x in self.sweep_hidden):
            raise ConfigError("Sweep cascade counts must be >= 1 and fractions in [0, 1]")
        if self.networks < 1 or self.draws < 1:
            raise ConfigError("Replication counts must be >= 1")

    @classmethod
    def load(
        cls, path: str | Path | None = None, overrides: Mapping[str, str] | None = None
    ) -> ExperimentConfig:
        """Read a config file (optional) and apply overrides on top."""
        values: dict[str, str] = {}
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as err:
                _LOGGER.error("Error reading config %s. %s", path, err)
                raise ConfigError(f"Cannot read config {path}") from err
            values = parse_lines(text, str(path))
        values.update(overrides or {})
        return cls(values)

    def with_overrides(self, overrides: Mapping[str, str]) -> ExperimentConfig:
        """Return a copy with some keys replaced."""
        return ExperimentConfig({**self.values, **overrides})

    def lines(self) -> list[str]:
        """Return the canonical ``key = value`` lines, sorted by key."""
        return [f"{key} = {self.values[key]}" for key in sorted(self.values)]

    @property
    def hash(self) -> str:
        """Return the short digest identifying this configuration."""
        return stable_hash("\n".join(self.lines()))

    def write(self, path: str | Path) -> None:
        """Write the canonical form."""
        try:
            Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")
        except OSError as err:
            _LOGGER.error("Error writing config %s. %s", path, err)
            raise ConfigError(f"Cannot write config {path}") from err

    @property
    def graph(self) -> GraphSpec:
        """Return the graph section."""
        v = self.values
        return GraphSpec(
            v["graph.type"],
            int(v["graph.n"]),
            float(v["graph.avg_degree"]),
            int(v["graph.degree"]),
            float(v["graph.m"]),
            int(v["graph.side"]),
            v["graph.path"],
            v["graph.superset"],
        )

    @property
    def distribution(self) -> ParamDistribution:
        """Return the ground-truth parameter distribution."""
        return parse_distribution(self.values["params.dist"])

    @property
    def cascades(self) -> int:
        """Return M."""
        return int(self.values["sim.cascades"])

    @property
    def horizon(self) -> int:
        """Return T."""
        return int(self.values["sim.horizon"])

    @property
    def seed_policy(self) -> SeedPolicy:
        """Return how cascade seeds are picked."""
        return SeedPolicy.parse(self.values["sim.seed_policy"])

    @property
    def hidden_fraction(self) -> float:
        """Return xi."""
        return float(self.values["obs.hidden"])

    @property
    def noise(self) -> NoiseSpec | None:
        """Return the timestamp noise, if any."""
        text = self.values["obs.noise"]
        return None if text == "none" else NoiseSpec.parse(text)

    @property
    def drop_intervals(self) -> bool:
        """Return if interval outcomes are discarded before learning."""
        return _bool(self.values["learn.drop_intervals"])

    def time_grid(self, rng: np.random.Generator) -> tuple[int, ...] | None:
        """Return the observation instants; ``random:f`` draws them from ``rng``."""
        text = self.values["obs.times"]
        if text == "full":
            return None
        if text.startswith("random:"):
            return random_time_grid(self.horizon, float(text[7:]), rng)
        return _ints(text)

    def observation(
        self, n: int, rng: np.random.Generator, hidden_fraction: float | None = None
    ) -> ObservationModel:
        """Draw the observation model of one experiment."""
        fraction = self.hidden_fraction if hidden_fraction is None else hidden_fraction
        grid = self.time_grid(rng)
        model = ObservationModel.random(n, fraction, rng, grid, self.noise)
        model.validate(n, self.horizon)
        return model

    def learner(self, threads: int = 1) -> LearnerConfig:
        """Return the learner settings."""
        v = self.values
        prune = float(v["learn.prune"])
        mode = LearnerMode(v["learn.mode"])
        return LearnerConfig(
            mode=mode,
            learning_rate=float(v["learn.rate"]),
            max_iterations=int(v["learn.max_iter"]),
            tolerance=float(v["learn.tol"]),
            alpha_init=float(v["learn.alpha_init"]),
            prune_threshold=prune if prune > 0 else None,
            noise=self.noise if mode is LearnerMode.NOISY else None,
            threads=threads,
        )

    @property
    def sweep_cascades(self) -> tuple[int, ...]:
        """Return the M axis of a sweep."""
        return _ints(self.values["sweep.cascades"])

    @property
    def sweep_hidden(self) -> tuple[float, ...]:
        """Return the xi axis of a sweep."""
        return _floats(self.values["sweep.hidden"])

    @property
    def networks(self) -> int:
        """Return the number of network replicates."""
        return int(self.values["sweep.networks"])

    @property
    def draws(self) -> int:
        """Return the number of parameter draws per network."""
        return int(self.values["sweep.draws"])

    @property
    def seed(self) -> int:
        """Return the master seed."""
        return int(self.values["run.seed"])

    @property
    def output(self) -> Path:
        """Return the output directory."""
        return Path(self.values["run.output"])
