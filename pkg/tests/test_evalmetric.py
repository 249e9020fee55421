from __future__ import annotations

import logging

import numpy as np
import pytest

from fcnseg.dataset import Dataset
from fcnseg.errors import DataError
from fcnseg.evalmetric import (
    MatchParams,
    coverage,
    evaluate_dataset,
    exhaustive_match,
    match_and_score,
    matches,
    oracle_method,
    overlay,
    pair_predicate,
    proj_method,
    write_report_csv,
)
from fcnseg.model import build_fcn
from fcnseg.segmenter import segment_probs
from fcnseg.synth import intervals_to_mask

from .conftest import small_spec

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Coverage and the matching predicate
# ---------------------------------------------------------------------------


def test_coverage_examples():
    assert coverage((5, 9), (5, 9)) == (5, 0)
    assert coverage((0, 3), (5, 9)) == (0, 5)
    assert coverage((3, 7), (5, 9)) == (3, 2)


def test_exact_prediction_matches():
    truths = [(10, 19), (30, 39)]
    assert matches((10, 19), truths) == 0
    assert matches((30, 39), truths) == 1


def test_shifted_prediction_still_matches():
    assert matches((13, 22), [(10, 19), (30, 39)]) == 0


def test_straddling_prediction_does_not_match():
    truths = [(0, 9), (10, 19)]
    assert matches((4, 15), truths) is None
    assert not pair_predicate((4, 15), truths, 0)
    assert not pair_predicate((4, 15), truths, 1)


def test_thresholds_are_strict():
    truths = [(0, 9)]
    assert matches((0, 1), truths) is None
    assert matches((0, 1), truths, MatchParams(t1=9)) == 0
    assert matches((0, 2), truths) == 0
    assert matches((0, 2), truths, MatchParams(t2=3)) is None
    assert matches((0, 9), [], MatchParams()) is None


def test_match_params_header():
    assert MatchParams().header() == "t1=8 t2=0 t3=5"


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def test_perfect_predictions_score_one():
    truths = [(2, 9), (9, 15), (18, 30), (33, 40)]
    report = match_and_score(truths, truths)
    assert (report.m, report.n, report.k, report.accuracy) == (4, 4, 4, 1.0)
    assert match_and_score(truths, truths, MatchParams(t1=1, t3=2)).accuracy == 1.0


def test_degenerate_cases():
    assert match_and_score([], [(0, 3)] * 5).accuracy == 0.0
    assert match_and_score([], []).accuracy == 1.0
    assert match_and_score([(0, 3)], []).accuracy == 0.0


def test_truth_is_matched_at_most_once():
    report = match_and_score([(10, 18), (11, 19)], [(10, 19)])
    assert report.k == 1 and report.pairs == [(0, 0)]
    assert report.accuracy == 0.5


def _random_segments(rng: np.random.Generator, width: int, count: int) -> list[tuple[int, int]]:
    cuts = np.sort(rng.choice(width, size=min(2 * count, width - width % 2), replace=False))
    return [(int(a), int(b)) for a, b in zip(cuts[0::2], cuts[1::2])]


def _jittered(rng: np.random.Generator, truths: list[tuple[int, int]], width: int) -> list[tuple[int, int]]:
    preds = []
    for a, b in truths:
        if rng.random() < 0.8:
            left = int(np.clip(a + rng.integers(-3, 4), 0, width - 1))
            right = int(np.clip(b + rng.integers(-3, 4), left, width - 1))
            preds.append((left, right))
    if rng.random() < 0.3:
        preds.extend(_random_segments(rng, width, 1))
    return sorted(preds)[:6]


def test_greedy_agrees_with_exhaustive_matching():
    rng = np.random.default_rng(2024)
    agree = 0
    trials = 10000
    for _ in range(trials):
        width = int(rng.integers(16, 65))
        truths = _random_segments(rng, width, int(rng.integers(0, 7)))
        preds = _jittered(rng, truths, width)
        greedy = match_and_score(preds, truths)
        best = exhaustive_match(preds, truths)
        assert greedy.k <= best.k <= min(greedy.m, greedy.n)
        assert 0.0 <= greedy.accuracy <= 1.0
        if greedy.k == best.k:
            agree += 1
        else:
            log.info("greedy %d < exhaustive %d for preds=%s truths=%s", greedy.k, best.k, preds, truths)
    assert agree >= 0.99 * trials


def test_translation_leaves_report_unchanged():
    rng = np.random.default_rng(5)
    for _ in range(200):
        truths = _random_segments(rng, 64, int(rng.integers(1, 7)))
        preds = _jittered(rng, truths, 64)
        offset = int(rng.integers(1, 100))
        moved = match_and_score(
            [(a + offset, b + offset) for a, b in preds], [(a + offset, b + offset) for a, b in truths]
        )
        assert moved == match_and_score(preds, truths)


# ---------------------------------------------------------------------------
# Dataset evaluation
# ---------------------------------------------------------------------------


def test_oracle_scores_one(dataset):
    report = evaluate_dataset(oracle_method(), dataset)
    assert report.mean_accuracy == 1.0
    assert report.names == dataset.names


def test_evaluation_is_deterministic(dataset):
    model = build_fcn(small_spec(), seed=0)
    first = evaluate_dataset(model, dataset)
    assert first.reports == evaluate_dataset(model, dataset).reports
    assert all(0.0 <= r.accuracy <= 1.0 for r in first.reports)


def _disconnected_line() -> Dataset:
    image = np.zeros((8, 40), np.uint8)
    image[2:6, 4:10] = 1
    image[2:6, 12:14] = 1
    image[2:6, 16:18] = 1
    image[2:6, 20:26] = 1
    return Dataset(["line"], image[None], [[(4, 9), (12, 17), (20, 25)]])


def test_proj_scores_below_ideal_mask_pipeline():
    ds = _disconnected_line()

    def ideal(dataset: Dataset) -> list[list[tuple[int, int]]]:
        out = []
        for image, intervals in zip(dataset.images, dataset.intervals):
            p = np.where(intervals_to_mask(intervals, dataset.width) == 1, 0.99, 0.01)
            out.append(segment_probs(p, image))
        return out

    best = evaluate_dataset(ideal, ds)
    proj = evaluate_dataset(proj_method(), ds)
    assert ideal(ds) == ds.intervals
    assert best.mean_accuracy == 1.0
    assert proj.mean_accuracy == 0.75


def test_empty_dataset_is_an_error(dataset):
    with pytest.raises(DataError):
        evaluate_dataset(oracle_method(), dataset.subset([]))


def test_report_csv(dataset, tmp_path):
    report = evaluate_dataset(oracle_method(), dataset)
    write_report_csv(report, tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "# t1=8 t2=0 t3=5"
    assert lines[1] == "sample,predictions,truths,matched,accuracy"
    assert len(lines) == 2 + len(dataset) + 1
    assert lines[-1] == "# samples=6 mean_acc=1.0000"


def test_overlay_keeps_image_size():
    ds = _disconnected_line()
    out = overlay(ds.images[0], [(4, 9), (10, 30)], ds.intervals[0])
    assert out.shape == ds.images[0].shape
    assert out.dtype == np.uint8
