from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pydantic
from scipy.optimize import linear_sum_assignment

from .dataset import Dataset
from .errors import DataError
from .model import FcnModel, predict
from .segmenter import DEFAULT_POSTPROC, PostprocParams, Segment, proj_segment, render_overlay, segment_probs

log = logging.getLogger(__name__)

Method = Callable[[Dataset], list[list[Segment]]]


class MatchParams(pydantic.BaseModel):
    """t1 bounds uncovered truth pixels, t2 is the covered-pixel floor, t3 bounds cross coverage."""

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    t1: pydantic.NonNegativeInt = 8
    t2: pydantic.NonNegativeInt = 0
    t3: pydantic.NonNegativeInt = 5

    def header(self) -> str:
        return f"t1={self.t1} t2={self.t2} t3={self.t3}"


DEFAULT_MATCH = MatchParams()


@dataclass
class MatchReport:
    m: int
    n: int
    k: int
    accuracy: float
    pairs: list[tuple[int, int]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def coverage(pred: Segment, truth: Segment) -> tuple[int, int]:
    """(covered, uncovered) columns of ``truth`` with respect to ``pred``."""
    covered = max(0, min(pred[1], truth[1]) - max(pred[0], truth[0]) + 1)
    return covered, truth[1] - truth[0] + 1 - covered


def _coverage_table(pred: Segment, truths: Sequence[Segment]) -> tuple[np.ndarray, np.ndarray]:
    table = np.array([coverage(pred, t) for t in truths], dtype=np.int64).reshape(-1, 2)
    return table[:, 0], table[:, 1]


def _conditions_hold(c: np.ndarray, u: np.ndarray, j: int, params: MatchParams) -> bool:
    cross = int(np.delete(c, j).max(initial=0))
    return bool(u[j] < params.t1 and c[j] > params.t2 and cross < params.t3)


def pair_predicate(pred: Segment, truths: Sequence[Segment], j: int, params: MatchParams = DEFAULT_MATCH) -> bool:
    """All matching conditions for the pair (pred, truths[j]) without tie-breaking."""
    c, u = _coverage_table(pred, truths)
    return bool(u[j] == u.min() and c[j] == c.max() and _conditions_hold(c, u, j, params))


def matches(pred: Segment, truths: Sequence[Segment], params: MatchParams = DEFAULT_MATCH) -> int | None:
    """Index of the truth ``pred`` matches, or None.

    The candidate is the smallest j that has both the least uncovered and the
    most covered pixels; the thresholds are checked for that j only.
    """
    if not truths:
        return None
    c, u = _coverage_table(pred, truths)
    best = np.flatnonzero((u == u.min()) & (c == c.max()))
    if best.size == 0:
        return None
    j = int(best[0])
    return j if _conditions_hold(c, u, j, params) else None


def _accuracy(m: int, n: int, k: int) -> float:
    return 1.0 if m == n == 0 else k / max(m, n)


def match_and_score(
    preds: Sequence[Segment], truths: Sequence[Segment], params: MatchParams = DEFAULT_MATCH
) -> MatchReport:
    """Greedy one-to-one matching in prediction order; accuracy is K / max(M, N)."""
    used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for i, pred in enumerate(preds):
        j = matches(pred, truths, params)
        if j is not None and j not in used:
            used.add(j)
            pairs.append((i, j))
    m, n, k = len(preds), len(truths), len(pairs)
    return MatchReport(m, n, k, _accuracy(m, n, k), pairs)


def exhaustive_match(
    preds: Sequence[Segment], truths: Sequence[Segment], params: MatchParams = DEFAULT_MATCH
) -> MatchReport:
    """Maximum one-to-one matching over every pair satisfying ``pair_predicate``."""
    m, n = len(preds), len(truths)
    allowed = np.zeros((m, n), dtype=np.int64)
    for i, pred in enumerate(preds):
        for j in range(n):
            allowed[i, j] = pair_predicate(pred, truths, j, params)
    rows, cols = linear_sum_assignment(allowed, maximize=True) if m and n else ([], [])
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if allowed[i, j]]
    return MatchReport(m, n, len(pairs), _accuracy(m, n, len(pairs)), pairs)


# ---------------------------------------------------------------------------
# Segmentation methods over a dataset
# ---------------------------------------------------------------------------


def fcn_method(model: FcnModel, post: PostprocParams = DEFAULT_POSTPROC, batch_size: int = 16) -> Method:
    def run(dataset: Dataset) -> list[list[Segment]]:
        probs = predict(model, dataset.images.astype(model.dtype), batch_size=batch_size)
        return [segment_probs(p, image, post) for p, image in zip(probs, dataset.images)]

    return run


def proj_method(blank_run_min: int = 1, post: PostprocParams = DEFAULT_POSTPROC) -> Method:
    def run(dataset: Dataset) -> list[list[Segment]]:
        return [proj_segment(image, blank_run_min, post) for image in dataset.images]

    return run


def oracle_method() -> Method:
    def run(dataset: Dataset) -> list[list[Segment]]:
        return [list(iv) for iv in dataset.intervals]

    return run


@dataclass
class DatasetReport:
    names: list[str]
    reports: list[MatchReport]
    params: MatchParams

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.reports]))

    def summary(self) -> str:
        return f"samples={len(self.reports)} mean_acc={self.mean_accuracy:.4f}"


def evaluate_dataset(
    method: FcnModel | Method,
    dataset: Dataset,
    params: MatchParams = DEFAULT_MATCH,
    post: PostprocParams = DEFAULT_POSTPROC,
) -> DatasetReport:
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    run = fcn_method(method, post) if isinstance(method, FcnModel) else method
    predictions = run(dataset)
    reports = [match_and_score(p, t, params) for p, t in zip(predictions, dataset.intervals)]
    report = DatasetReport(list(dataset.names), reports, params)
    log.info("evaluated %s", report.summary())
    return report


def write_report_csv(report: DatasetReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {report.params.header()}\n")
        writer = csv.writer(f)
        writer.writerow(["sample", "predictions", "truths", "matched", "accuracy"])
        for name, r in zip(report.names, report.reports):
            writer.writerow([name, r.m, r.n, r.k, f"{r.accuracy:.6f}"])
        f.write(f"# {report.summary()}\n")


def overlay(
    image: np.ndarray, preds: Sequence[Segment], truths: Sequence[Segment], params: MatchParams = DEFAULT_MATCH
) -> np.ndarray:
    """render_overlay with matched predictions marked under ``params``."""
    matched = {i for i, _ in match_and_score(preds, truths, params).pairs}
    return render_overlay(image, preds, truths, matched)
