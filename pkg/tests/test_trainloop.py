from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from fcnseg.errors import ConfigurationError, DataError, ShapeError
from fcnseg.model import build_fcn, save_checkpoint
from fcnseg.trainloop import (
    LossWeights,
    TrainConfig,
    batch_accuracies,
    train,
    update_loss_weights,
    weighted_bce,
)

from .conftest import small_spec


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def test_perfect_prediction_has_near_zero_loss():
    q = np.array([[1, 0, 0, 1, 0]])
    p = np.where(q == 1, 1 - 1e-12, 1e-12)
    loss, _ = weighted_bce(p, q, LossWeights.of(0.9))
    assert 0 <= loss <= 1e-10 * q.size


def test_half_probability_loss_formula():
    q = np.array([[1, 1, 0, 0, 0]])
    w = LossWeights.of(0.9)
    loss, _ = weighted_bce(np.full(q.shape, 0.5), q, w)
    assert loss == pytest.approx((w.alpha * 2 + w.beta * 3) * math.log(2))


def test_equal_weights_halve_plain_cross_entropy(rng):
    p = rng.uniform(0.01, 0.99, (3, 20))
    q = (rng.random((3, 20)) < 0.3).astype(np.uint8)
    plain = -(q * np.log(p) + (1 - q) * np.log(1 - p)).sum() / 3
    loss, _ = weighted_bce(p, q, LossWeights.of(0.5))
    assert loss == pytest.approx(plain / 2)


def test_loss_gradient_matches_finite_differences(rng):
    p = rng.uniform(0.05, 0.95, (2, 8))
    q = (rng.random((2, 8)) < 0.5).astype(np.uint8)
    w = LossWeights.of(0.7)
    _, grad = weighted_bce(p, q, w)
    eps = 1e-6
    for idx in np.ndindex(p.shape):
        plus, minus = p.copy(), p.copy()
        plus[idx] += eps
        minus[idx] -= eps
        numeric = (weighted_bce(plus, q, w)[0] - weighted_bce(minus, q, w)[0]) / (2 * eps)
        assert grad[idx] == pytest.approx(numeric, rel=1e-6)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        weighted_bce(np.full((1, 4), 0.5), np.zeros((1, 5)), LossWeights.of(0.9))


# ---------------------------------------------------------------------------
# Accuracies and weight updates
# ---------------------------------------------------------------------------


def test_accuracies():
    q = np.array([[1, 0, 0, 1]])
    assert batch_accuracies(np.array([[0.9, 0.1, 0.2, 0.8]]), q) == (1.0, 1.0)
    assert batch_accuracies(np.full((1, 4), 0.5), q) == (0.0, 0.0)
    assert batch_accuracies(np.array([[0.9, 0.9, 0.1, 0.1]]), q) == (0.5, 0.5)


def test_absent_class_scores_one():
    assert batch_accuracies(np.full((1, 3), 0.2), np.zeros((1, 3))) == (1.0, 1.0)


def test_accuracies_match_counting(rng):
    p = rng.random((4, 30))
    q = (rng.random((4, 30)) < 0.2).astype(np.uint8)
    pos = [p.flat[i] > 0.5 for i in range(p.size) if q.flat[i] == 1]
    neg = [p.flat[i] < 0.5 for i in range(p.size) if q.flat[i] == 0]
    assert batch_accuracies(p, q) == pytest.approx((sum(pos) / len(pos), sum(neg) / len(neg)))


def test_weight_update_examples():
    w = update_loss_weights(LossWeights(0.9, 0.1), 0.4, 0.99, 0.001)
    assert w.alpha == pytest.approx(0.901) and w.beta == pytest.approx(0.099)

    w = update_loss_weights(LossWeights.of(0.9995), 0.1, 0.9, 0.001)
    assert (w.alpha, w.beta) == (1.0, 0.0)

    w = update_loss_weights(LossWeights(0.5, 0.5), 0.7, 0.7, 0.001)
    assert w.alpha == pytest.approx(0.499) and w.beta == pytest.approx(0.501)


def test_weight_trajectory_matches_scripted_simulation(rng):
    accs = rng.random((10000, 2))
    accs[::7, 1] = accs[::7, 0]
    w = LossWeights.of(0.9)
    alpha = 0.9
    for acc_pos, acc_neg in accs:
        w = update_loss_weights(w, acc_pos, acc_neg, 0.001)
        beta = 1.0 - alpha
        if acc_pos < acc_neg:
            alpha = alpha + min(beta, 0.001)
        else:
            alpha = alpha - min(alpha, 0.001)
        assert w.alpha == alpha
        assert w.alpha + w.beta == 1.0
        assert 0.0 <= w.alpha <= 1.0


def test_alpha_never_decreases_when_positives_lag():
    w = LossWeights.of(0.3)
    for _ in range(1000):
        nxt = update_loss_weights(w, 0.1, 0.9, 0.001)
        assert nxt.alpha >= w.alpha
        w = nxt
    assert w.alpha == 1.0


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def test_default_schedule():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.momentum, cfg.learning_rate, cfg.iterations) == (8, 0.9, 1e-4, 50000)
    assert cfg.drops == (20000, 40000)
    assert cfg.beta0 == pytest.approx(0.1)
    assert cfg.lr_at(1) == 1e-4
    assert cfg.lr_at(20000) == pytest.approx(1e-5)
    assert cfg.lr_at(45000) == pytest.approx(1e-6)


def test_desk_schedule():
    cfg = TrainConfig.desk(seed=3)
    assert cfg.iterations == 3000
    assert cfg.drops == (1200, 2400)


def test_drop_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=100, lr_drops=(50, 20))
    with pytest.raises(ValueError):
        TrainConfig(iterations=100, lr_drops=(200,))
    assert TrainConfig(iterations=0).drops == ()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def test_zero_iterations_leaves_model_untouched(dataset, tmp_path):
    model = build_fcn(small_spec(), seed=0)
    before = [p.weight.copy() for p in model.params()]
    ckpt, log = train(model, dataset, TrainConfig(iterations=0))
    assert len(log) == 0
    assert all(np.array_equal(a, p.weight) for a, p in zip(before, ckpt.model.params()))
    assert (ckpt.alpha, ckpt.iteration) == (0.9, 0)


def test_training_is_deterministic(dataset, tmp_path):
    cfg = TrainConfig(iterations=4, batch_size=2, seed=5, learning_rate=0.01)
    logs = []
    for name in ("a", "b"):
        ckpt, log = train(build_fcn(small_spec(), seed=1), dataset, cfg)
        save_checkpoint(ckpt.model, tmp_path / name, ckpt.iteration, ckpt.alpha, ckpt.beta)
        logs.append(log.records)
    assert logs[0] == logs[1]
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_training_updates_weights_and_logs(dataset, tmp_path):
    model = build_fcn(small_spec(), seed=1)
    before = model.params()[0].weight.copy()
    cfg = TrainConfig(iterations=3, batch_size=2, seed=0, learning_rate=0.01, lr_drops=(2,))
    ckpt, log = train(model, dataset, cfg)
    assert not np.array_equal(before, ckpt.model.params()[0].weight)
    assert [r.iteration for r in log.records] == [1, 2, 3]
    assert [r.lr for r in log.records] == pytest.approx([0.01, 0.001, 0.001])
    assert log.records[0].alpha == 0.9
    assert model.mode == "infer"

    log.to_csv(tmp_path / "log.csv")
    with open(tmp_path / "log.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["iteration", "loss", "acc_pos", "acc_neg", "alpha", "lr"]
    assert len(rows) == 4


def test_width_mismatch_is_a_configuration_error(dataset):
    model = build_fcn(small_spec(width=128), seed=0)
    with pytest.raises(ConfigurationError):
        train(model, dataset, TrainConfig(iterations=1))


def test_empty_dataset_rejected(dataset):
    with pytest.raises(DataError):
        train(build_fcn(small_spec(), seed=0), dataset.subset([]), TrainConfig(iterations=1))
