from __future__ import annotations

import logging
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .dataset import Dataset, load_dataset
from .errors import ConfigurationError
from .evalmetric import DEFAULT_MATCH, MatchParams, coverage, evaluate_dataset, proj_method
from .model import ArchitectureSpec, FcnModel, build_fcn
from .segmenter import DEFAULT_POSTPROC, PostprocParams, Segment
from .synth import STYLES, GlyphAtlas, generate_dataset, make_corpus, make_toy_atlas
from .trainloop import TrainConfig, train

log = logging.getLogger(__name__)

EXPERIMENTS = ("baseline", "content", "style")


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    fcn_accuracy: float
    proj_accuracy: float
    oversplit_disconnected: int

    def lines(self) -> list[str]:
        return [
            f"fcn_acc={self.fcn_accuracy:.4f}",
            f"proj_acc={self.proj_accuracy:.4f}",
            f"proj_oversplit_disconnected={self.oversplit_disconnected}",
        ]


@dataclass
class ContentMatrix:
    accuracies: dict[tuple[str, str], float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        return [f"train={t} eval={e} acc={a:.4f}" for (t, e), a in self.accuracies.items()]


@dataclass
class StyleResult:
    style: str
    with_style: float
    without_style: float

    def lines(self) -> list[str]:
        return [
            f"style={self.style} trained_with={self.with_style:.4f}",
            f"style={self.style} trained_without={self.without_style:.4f}",
        ]


# ---------------------------------------------------------------------------
# Experiments on prepared data
# ---------------------------------------------------------------------------


def _oversplit(preds: Sequence[Segment], truth: Segment) -> bool:
    """Two or more predictions that each lie mostly inside ``truth``."""
    inside = 0
    for pred in preds:
        covered, _ = coverage(pred, truth)
        if covered and 2 * covered >= pred[1] - pred[0] + 1:
            inside += 1
    return inside >= 2


def count_oversplit(
    predictions: Sequence[Sequence[Segment]], dataset: Dataset, glyph_ids: Collection[int]
) -> int:
    """Truth intervals of the given glyphs that ``predictions`` cut into pieces."""
    wanted = set(glyph_ids)
    total = 0
    for preds, intervals, ids in zip(predictions, dataset.intervals, dataset.glyph_ids):
        for truth, gid in zip(intervals, ids):
            if gid in wanted and _oversplit(preds, truth):
                total += 1
    return total


def baseline_comparison(
    model: FcnModel,
    dataset: Dataset,
    disconnected_ids: Collection[int] = (),
    match: MatchParams = DEFAULT_MATCH,
    post: PostprocParams = DEFAULT_POSTPROC,
) -> BaselineResult:
    """FCN against the projection-profile splitter on the same lines."""
    fcn = evaluate_dataset(model, dataset, match, post)
    proj = proj_method(post=post)
    proj_report = evaluate_dataset(proj, dataset, match, post)
    oversplit = count_oversplit(proj(dataset), dataset, disconnected_ids)
    return BaselineResult(fcn.mean_accuracy, proj_report.mean_accuracy, oversplit)


def train_fresh(spec: ArchitectureSpec, dataset: Dataset, cfg: TrainConfig, seed: int) -> FcnModel:
    model = build_fcn(spec, seed)
    checkpoint, _ = train(model, dataset, cfg)
    return checkpoint.model


def content_style_matrix(
    train_sets: Mapping[str, Dataset],
    eval_sets: Mapping[str, Dataset],
    spec: ArchitectureSpec,
    cfg: TrainConfig,
    seed: int,
    match: MatchParams = DEFAULT_MATCH,
) -> ContentMatrix:
    """Accuracy of a model trained on each training set, evaluated on every eval set."""
    result = ContentMatrix()
    for train_name, train_set in train_sets.items():
        log.info("training on %s (%d samples)", train_name, len(train_set))
        model = train_fresh(spec, train_set, cfg, seed)
        for eval_name, eval_set in eval_sets.items():
            result.accuracies[(train_name, eval_name)] = evaluate_dataset(model, eval_set, match).mean_accuracy
    return result


# ---------------------------------------------------------------------------
# Desk-scale drivers: synthesize, train, evaluate
# ---------------------------------------------------------------------------


@dataclass
class Workbench:
    """Everything a desk-scale run derives from one RunConfig and seed."""

    run: RunConfig
    seed: int
    workdir: Path
    train_count: int = 1000
    eval_count: int = 100
    atlas: GlyphAtlas = field(init=False)
    corpus: list[int] = field(init=False)

    def __post_init__(self) -> None:
        if self.run.model.input_width != self.run.synth.width:
            raise ConfigurationError(
                f"model.input_width={self.run.model.input_width} differs from synth.width={self.run.synth.width}"
            )
        self.workdir = Path(self.workdir)
        self.atlas = make_toy_atlas(self.seed, self.run.synth.glyph_count, self.run.model.input_height)
        self.corpus = make_corpus(self.atlas, self.run.synth.corpus_length, self.seed)

    @property
    def spec(self) -> ArchitectureSpec:
        return self.run.model.spec()

    def dataset(self, name: str, content: str, count: int, seed: int, styles: Sequence[str] | None = None) -> Dataset:
        synth = self.run.synth
        if styles is not None:
            synth = synth.model_copy(update={"styles": tuple(styles)})
        out = self.workdir / name
        generate_dataset(self.atlas, content, self.corpus, count, seed, out, self.run.disturb, synth)
        return load_dataset(out)

    def train_on(self, dataset: Dataset) -> FcnModel:
        cfg = self.run.train.model_copy(update={"seed": self.seed})
        return train_fresh(self.spec, dataset, cfg, self.seed)


def run_baseline(bench: Workbench) -> BaselineResult:
    train_set = bench.dataset("train-normal", "normal", bench.train_count, bench.seed)
    eval_set = bench.dataset("eval-normal", "normal", bench.eval_count, bench.seed + 1)
    model = bench.train_on(train_set)
    return baseline_comparison(model, eval_set, bench.atlas.disconnected_ids(), bench.run.match, bench.run.post)


def run_content(bench: Workbench) -> ContentMatrix:
    normal = bench.dataset("train-normal", "normal", bench.train_count, bench.seed)
    chaotic = bench.dataset("train-chaotic", "chaotic", bench.train_count, bench.seed + 2)
    train_sets = {
        "normal": normal,
        "chaotic": chaotic,
        "all": load_dataset([bench.workdir / "train-normal", bench.workdir / "train-chaotic"]),
    }
    eval_sets = {
        "normal": bench.dataset("eval-normal", "normal", bench.eval_count, bench.seed + 1),
        "chaotic": bench.dataset("eval-chaotic", "chaotic", bench.eval_count, bench.seed + 3),
    }
    cfg = bench.run.train.model_copy(update={"seed": bench.seed})
    return content_style_matrix(train_sets, eval_sets, bench.spec, cfg, bench.seed, bench.run.match)


def leave_one_style_out(bench: Workbench, style: str) -> StyleResult:
    """Accuracy on ``style`` for a model trained on every style versus all but it."""
    if style not in STYLES:
        raise ConfigurationError(f"unknown style {style!r}, expected one of {', '.join(STYLES)}")
    others = [s for s in STYLES if s != style]
    with_set = bench.dataset("train-all-styles", "normal", bench.train_count, bench.seed, STYLES)
    without_set = bench.dataset(f"train-without-{style}", "normal", bench.train_count, bench.seed, others)
    eval_set = bench.dataset(f"eval-{style}", "normal", bench.eval_count, bench.seed + 1, [style])
    with_acc = evaluate_dataset(bench.train_on(with_set), eval_set, bench.run.match).mean_accuracy
    without_acc = evaluate_dataset(bench.train_on(without_set), eval_set, bench.run.match).mean_accuracy
    return StyleResult(style, with_acc, without_acc)


def run_experiment(name: str, bench: Workbench, style: str = "hollow") -> list[str]:
    if name == "baseline":
        return run_baseline(bench).lines()
    if name == "content":
        return run_content(bench).lines()
    if name == "style":
        return leave_one_style_out(bench, style).lines()
    raise ConfigurationError(f"unknown experiment {name!r}, expected one of {', '.join(EXPERIMENTS)}")

