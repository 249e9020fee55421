from __future__ import annotations

import csv
import logging
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path

import numpy as np
import pydantic

from .dataset import Dataset
from .errors import ConfigurationError, DataError, ShapeError
from .model import FcnModel, ModelCheckpoint, backward, forward
from .numerics import OptimizerState, sgd_momentum_step

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# Loss weights and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    """Positive/negative class weights; beta is always derived as 1 - alpha."""

    alpha: float
    beta: float

    @classmethod
    def of(cls, alpha: float) -> LossWeights:
        alpha = min(1.0, max(0.0, float(alpha)))
        return cls(alpha, 1.0 - alpha)


class TrainConfig(pydantic.BaseModel):
    """Mini-batch SGD schedule.

    ``lr_drops`` left unset places the drops at 40% and 80% of
    ``iterations`` (20000/40000 for the full 50000-iteration run).
    """

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    batch_size: pydantic.PositiveInt = 8
    momentum: float = pydantic.Field(0.9, ge=0.0, lt=1.0)
    learning_rate: float = pydantic.Field(1e-4, gt=0.0)
    iterations: pydantic.NonNegativeInt = 50000
    lr_drops: tuple[pydantic.PositiveInt, ...] | None = None
    lr_factor: float = pydantic.Field(10.0, gt=0.0)
    alpha0: float = pydantic.Field(0.9, ge=0.0, le=1.0)
    delta_cap: float = pydantic.Field(0.001, ge=0.0, le=1.0)
    seed: int = 0
    log_every: pydantic.PositiveInt = 100

    @pydantic.model_validator(mode="after")
    def _check_drops(self) -> TrainConfig:
        if self.lr_drops is not None:
            if list(self.lr_drops) != sorted(set(self.lr_drops)):
                raise ValueError(f"lr_drops must be strictly increasing, got {self.lr_drops}")
            if self.lr_drops and self.lr_drops[-1] > self.iterations:
                raise ValueError(f"lr drop {self.lr_drops[-1]} is beyond {self.iterations} iterations")
        return self

    @property
    def beta0(self) -> float:
        return LossWeights.of(self.alpha0).beta

    @property
    def drops(self) -> tuple[int, ...]:
        if self.lr_drops is not None:
            return self.lr_drops
        return tuple(d for d in (round(0.4 * self.iterations), round(0.8 * self.iterations)) if d > 0)

    def lr_at(self, iteration: int) -> float:
        """Learning rate in effect for 1-based ``iteration``."""
        passed = sum(1 for d in self.drops if d <= iteration)
        return self.learning_rate / self.lr_factor**passed

    @classmethod
    def desk(cls, seed: int = 0, **overrides) -> TrainConfig:
        """CPU-sized run: 3000 iterations, drops at 1200 and 2400."""
        return cls(seed=seed, **{"iterations": 3000, **overrides})


# ---------------------------------------------------------------------------
# Loss, accuracies and the weight heuristic
# ---------------------------------------------------------------------------


def weighted_bce(p: np.ndarray, q: np.ndarray, w: LossWeights) -> tuple[float, np.ndarray]:
    """Class-weighted binary cross entropy summed over positions, divided by batch size."""
    if p.shape != q.shape:
        raise ShapeError(f"probabilities {p.shape} and labels {q.shape} differ in shape")
    p64 = np.asarray(p, dtype=np.float64)
    pos = np.asarray(q) > 0
    batch = p64.shape[0] if p64.ndim > 1 else 1
    p_pos = np.maximum(p64, PROB_CLAMP)
    p_neg = np.maximum(1.0 - p64, PROB_CLAMP)

    loss = -(w.alpha * np.log(p_pos[pos]).sum() + w.beta * np.log(p_neg[~pos]).sum()) / batch
    grad = np.where(
        pos,
        np.where(p64 > PROB_CLAMP, -w.alpha / p_pos, 0.0),
        np.where(1.0 - p64 > PROB_CLAMP, w.beta / p_neg, 0.0),
    )
    return float(loss), grad / batch


def batch_accuracies(p: np.ndarray, q: np.ndarray) -> tuple[float, float]:
    """(positive, negative) accuracy; a class absent from the batch scores 1.0."""
    pos = np.asarray(q) > 0
    acc_pos = float(np.mean(p[pos] > 0.5)) if pos.any() else 1.0
    acc_neg = float(np.mean(p[~pos] < 0.5)) if (~pos).any() else 1.0
    return acc_pos, acc_neg


def update_loss_weights(w: LossWeights, acc_pos: float, acc_neg: float, delta_cap: float) -> LossWeights:
    if acc_pos < acc_neg:
        delta = min(w.beta, delta_cap)
        return LossWeights.of(w.alpha + delta)
    delta = min(w.alpha, delta_cap)
    return LossWeights.of(w.alpha - delta)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    loss: float
    acc_pos: float
    acc_neg: float
    alpha: float
    lr: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TrainRecord) -> None:
        self.records.append(record)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow([fl.name for fl in fields(TrainRecord)])
            for r in self.records:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple(r)])


def train(model: FcnModel, dataset: Dataset, cfg: TrainConfig) -> tuple[ModelCheckpoint, TrainLog]:
    """Run ``cfg.iterations`` SGD steps, re-weighting the loss after every step."""
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    spec = model.spec
    if (dataset.height, dataset.width) != (spec.input_height, spec.input_width):
        raise ConfigurationError(
            f"dataset lines are {dataset.height}x{dataset.width}, "
            f"model expects {spec.input_height}x{spec.input_width}"
        )

    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.for_params(model.params(), cfg.learning_rate, cfg.momentum)
    weights = LossWeights.of(cfg.alpha0)
    history = TrainLog()
    model.zero_grad()
    model.mode = "train"
    try:
        for it in range(1, cfg.iterations + 1):
            opt.learning_rate = cfg.lr_at(it)
            idx = rng.integers(0, len(dataset), size=cfg.batch_size)
            batch = dataset.images[idx][:, None].astype(model.dtype)
            q = dataset.masks[idx]

            p = forward(model, batch)
            loss, grad = weighted_bce(p, q, weights)
            backward(model, grad)
            sgd_momentum_step(model.params(), opt)
            acc_pos, acc_neg = batch_accuracies(p, q)
            history.append(TrainRecord(it, loss, acc_pos, acc_neg, weights.alpha, opt.learning_rate))
            weights = update_loss_weights(weights, acc_pos, acc_neg, cfg.delta_cap)

            if it % cfg.log_every == 0:
                log.info(
                    "iter %d loss=%.5f acc_pos=%.4f acc_neg=%.4f alpha=%.4f lr=%.1e",
                    it, loss, acc_pos, acc_neg, weights.alpha, opt.learning_rate,
                )
    finally:
        model.mode = "infer"

    checkpoint = ModelCheckpoint(model=model, iteration=cfg.iterations, alpha=weights.alpha, beta=weights.beta)
    return checkpoint, history
