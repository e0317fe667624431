"""
pyslicer.metrics
~~~~~~~~~~~~~~~~~~~~
Parameter error, ROC AUC and report files
Licensed under the MIT license.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from .constants import DEFAULT_PRUNE_THRESHOLD
from .exceptions import DataFormatError, GraphError
from .graph import CandidateEdgeSet, EdgeParams

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    """Quality of a learned parameter set against the truth."""

    mean_l1: float
    mean_signed: float
    auc: float
    true_positives: int
    false_positives: int
    truth_edges: int
    candidate_edges: int

    def to_frame(self) -> pd.DataFrame:
        """Return the report as ``metric,value`` rows."""
        return pd.DataFrame(
            {"metric": list(asdict(self)), "value": list(asdict(self).values())}
        )


def l1_param_error(learned: EdgeParams, truth: EdgeParams) -> tuple[float, float]:
    """Mean absolute and mean signed error over the true edges.

    Edges missing from ``learned`` count as 0.
    """
    if not len(truth):
        raise GraphError("Cannot score against an empty truth set")
    estimate = np.array([learned.get(pair, 0.0) for pair in truth.edges])
    diff = estimate - truth.values
    return float(np.abs(diff).mean()), float(diff.mean())


def roc_auc(scores: np.ndarray, truth_mask: np.ndarray) -> float:
    """Area under the ROC curve of true against fake edges; ties count half."""
    scores = np.asarray(scores, dtype=float)
    mask = np.asarray(truth_mask, dtype=bool)
    if scores.shape != mask.shape:
        raise GraphError("Scores and truth mask differ in length")
    positives = int(mask.sum())
    negatives = len(mask) - positives
    if positives == 0 or negatives == 0:
        raise GraphError("AUC needs at least one true and one fake edge")
    return float(roc_auc_score(mask, scores))


def evaluate(
    learned: EdgeParams,
    truth: EdgeParams,
    candidates: CandidateEdgeSet | None = None,
    prune_threshold: float = DEFAULT_PRUNE_THRESHOLD,
) -> EvalReport:
    """Score learned parameters; AUC needs candidates with truth flags."""
    mean_l1, mean_signed = l1_param_error(learned, truth)
    auc = float("nan")
    true_pos = sum(1 for pair in truth.edges if learned.get(pair, 0.0) >= prune_threshold)
    false_pos = 0
    count = len(truth)
    if candidates is not None and candidates.truth_mask is not None:
        scores = np.array([learned.get(pair, 0.0) for pair in candidates.edges])
        mask = candidates.truth_mask
        false_pos = int(((scores >= prune_threshold) & ~mask).sum())
        count = len(candidates)
        if mask.any() and not mask.all():
            auc = roc_auc(scores, mask)
    return EvalReport(mean_l1, mean_signed, auc, true_pos, false_pos, len(truth), count)


def _write_csv(
    path: str | Path, frame: pd.DataFrame, what: str, metadata: dict[str, object] | None
) -> None:
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for key, value in (metadata or {}).items():
                handle.write(f"# {key}={value}\n")
            frame.to_csv(handle, index=False, float_format="%.17g")
    except OSError as err:
        _LOGGER.error("Error writing %s %s. %s", what, path, err)
        raise DataFormatError(f"Cannot write {path}") from err


def write_report(
    path: str | Path, report: EvalReport, metadata: dict[str, object] | None = None
) -> None:
    """Write a ``metric,value`` CSV under optional ``# key=value`` lines."""
    _write_csv(path, report.to_frame(), "report", metadata)


def read_report(path: str | Path) -> EvalReport:
    """Read a report written by write_report."""
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
        values = dict(zip(frame["metric"], frame["value"]))
    except (OSError, KeyError, ValueError) as err:
        _LOGGER.error("Error reading report %s. %s", path, err)
        raise DataFormatError(f"Cannot read {path}") from err
    try:
        kwargs = {
            item.name: (int if item.type == "int" else float)(values[item.name])
            for item in fields(EvalReport)
        }
    except KeyError as err:
        raise DataFormatError(f"{path}: missing metric {err.args[0]}") from err
    return EvalReport(**kwargs)


def write_scatter(
    path: str | Path,
    learned: EdgeParams,
    truth: EdgeParams,
    metadata: dict[str, object] | None = None,
) -> None:
    """Write ``i,j,alpha_true,alpha_learned`` for every true edge."""
    pairs = np.asarray(truth.edges, dtype=np.int64).reshape(-1, 2)
    frame = pd.DataFrame(
        {
            "i": pairs[:, 0],
            "j": pairs[:, 1],
            "alpha_true": truth.values,
            "alpha_learned": [learned.get(pair, 0.0) for pair in truth.edges],
        }
    )
    _write_csv(path, frame, "scatter", metadata)
