from __future__ import annotations

import numpy as np
import pytest

from fcnseg.config import ModelOptions, RunConfig
from fcnseg.dataset import Dataset
from fcnseg.errors import ConfigurationError
from fcnseg.experiments import (
    Workbench,
    baseline_comparison,
    count_oversplit,
    leave_one_style_out,
    run_baseline,
    run_content,
    run_experiment,
)
from fcnseg.model import build_fcn, save_checkpoint
from fcnseg.synth import SynthParams
from fcnseg.trainloop import TrainConfig, train

from .conftest import small_spec


def _two_glyph_line() -> Dataset:
    image = np.zeros((8, 40), np.uint8)
    image[2:6, 4:10] = 1
    image[2:6, 12:14] = 1
    image[2:6, 16:18] = 1
    return Dataset(["line"], image[None], [[(4, 9), (12, 17)]], [[0, 1]])


def test_count_oversplit():
    ds = _two_glyph_line()
    assert count_oversplit([[(3, 10), (10, 14), (14, 19)]], ds, {1}) == 1
    assert count_oversplit([[(3, 10), (10, 14), (14, 19)]], ds, {0}) == 0
    assert count_oversplit([[(3, 10), (11, 18)]], ds, {0, 1}) == 0


def test_baseline_comparison(dataset, atlas):
    model = build_fcn(small_spec(), seed=0)
    result = baseline_comparison(model, dataset, atlas.disconnected_ids())
    assert 0.0 <= result.fcn_accuracy <= 1.0
    assert 0.0 <= result.proj_accuracy <= 1.0
    assert result.oversplit_disconnected >= 0
    assert result.lines()[0].startswith("fcn_acc=")


def _small_run(width: int = 64, iterations: int = 2) -> RunConfig:
    return RunConfig(
        train=TrainConfig(iterations=iterations, batch_size=2),
        synth=SynthParams(width=width),
        model=ModelOptions(input_width=width),
    )


def test_workbench_checks_widths(tmp_path):
    run = _small_run().model_copy(update={"synth": SynthParams(width=128)})
    with pytest.raises(ConfigurationError):
        Workbench(run, 0, tmp_path)


def test_tiny_baseline_run(tmp_path):
    bench = Workbench(_small_run(), 3, tmp_path, train_count=4, eval_count=2)
    lines = run_experiment("baseline", bench)
    assert [line.split("=")[0] for line in lines] == ["fcn_acc", "proj_acc", "proj_oversplit_disconnected"]
    assert (tmp_path / "train-normal" / "manifest.txt").exists()


def test_unknown_experiment_and_style(tmp_path):
    bench = Workbench(_small_run(), 0, tmp_path, train_count=2, eval_count=1)
    with pytest.raises(ConfigurationError):
        run_experiment("nope", bench)
    with pytest.raises(ConfigurationError):
        leave_one_style_out(bench, "gothic")


# ---------------------------------------------------------------------------
# Desk scale: 512-wide lines, 1000 training samples, 3000 iterations
# ---------------------------------------------------------------------------


def _desk_run() -> RunConfig:
    return RunConfig(
        train=TrainConfig.desk(seed=0),
        synth=SynthParams(width=512),
        model=ModelOptions(input_width=512),
    )


@pytest.mark.slow
def test_desk_scale_baseline(tmp_path):
    result = run_baseline(Workbench(_desk_run(), 0, tmp_path))
    assert result.fcn_accuracy >= 0.95
    assert result.fcn_accuracy >= result.proj_accuracy + 0.05
    assert result.oversplit_disconnected >= 1


@pytest.mark.slow
def test_chaotic_training_generalizes_to_normal_lines(tmp_path):
    acc = run_content(Workbench(_desk_run(), 0, tmp_path)).accuracies
    assert abs(acc[("chaotic", "normal")] - acc[("normal", "normal")]) <= 0.03


@pytest.mark.slow
def test_seeded_desk_runs_give_identical_checkpoints(tmp_path):
    run = _desk_run()
    for name in ("a", "b"):
        bench = Workbench(run, 0, tmp_path / name)
        train_set = bench.dataset("train-normal", "normal", bench.train_count, bench.seed)
        ckpt, _ = train(build_fcn(bench.spec, run.train.seed), train_set, run.train)
        save_checkpoint(ckpt.model, tmp_path / f"{name}.ckpt", ckpt.iteration, ckpt.alpha, ckpt.beta)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
