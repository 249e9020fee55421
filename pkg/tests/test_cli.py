from __future__ import annotations

import numpy as np
import pytest

from fcnseg.cli import EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, _config, build_parser, main
from fcnseg.formats import read_manifest, read_pgm, read_segments_json, write_binary_pgm
from fcnseg.gradcheck import CHECKS
from fcnseg.model import ArchitectureSpec, build_fcn, read_checkpoint, save_checkpoint


def _synth(out, *extra: str) -> int:
    return main(["synth", "--seed", "7", "--count", "3", "--width", "64", "--out", str(out), *extra])


def _files(root) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def test_synth_twice_gives_identical_directories(tmp_path, capsys):
    assert _synth(tmp_path / "a", "--content", "chaotic") == EXIT_OK
    assert _synth(tmp_path / "b", "--content", "chaotic") == EXIT_OK
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    assert "SUMMARY: 3 samples written" in capsys.readouterr().out


def test_synth_zero_count(tmp_path):
    assert main(["synth", "--seed", "1", "--count", "0", "--width", "64", "--out", str(tmp_path / "e")]) == EXIT_OK
    assert read_manifest(tmp_path / "e").names == []


def test_synth_rejects_width_not_multiple_of_32(tmp_path, capsys):
    assert main(["synth", "--seed", "1", "--count", "1", "--width", "500", "--out", str(tmp_path / "x")]) == EXIT_ERROR
    assert "multiple of 32" in capsys.readouterr().err


def test_seed_is_mandatory(tmp_path):
    assert main(["synth", "--count", "1", "--out", str(tmp_path / "x")]) == EXIT_ERROR


def test_bad_set_assignment(tmp_path):
    assert _synth(tmp_path / "x", "--set", "synth.nonsense = 3") == EXIT_ERROR


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train(data, out, *extra: str) -> int:
    return main(["train", "--data", str(data), "--out", str(out), *extra])


def test_train_defaults_follow_full_schedule():
    args = build_parser().parse_args(["train", "--data", "d", "--out", "m", "--seed", "0"])
    assert (args.iters, args.batch, args.lr, args.drops) == (None, None, None, None)

    cfg = _config(args, {}).train
    assert (cfg.iterations, cfg.batch_size, cfg.learning_rate, cfg.drops) == (50000, 8, 1e-4, (20000, 40000))


def test_train_zero_iterations_keeps_init(tmp_path):
    _synth(tmp_path / "ds")
    ckpt = tmp_path / "m.ckpt"
    assert _train(tmp_path / "ds", ckpt, "--seed", "4", "--iters", "0", "--width", "64") == EXIT_OK
    init = build_fcn(ArchitectureSpec(input_width=64), seed=4)
    saved = read_checkpoint(ckpt)
    for a, b in zip(init.params(), saved.model.params()):
        np.testing.assert_array_equal(a.weight.astype(np.float32), b.weight)
    assert (tmp_path / "m.csv").exists()


def test_seeded_training_reruns_are_identical(tmp_path):
    _synth(tmp_path / "ds")
    for name in ("a", "b"):
        flags = ["--iters", "2", "--batch", "2", "--width", "64", "--log", str(tmp_path / f"{name}.log")]
        assert _train(tmp_path / "ds", tmp_path / name, "--seed", "3", *flags) == EXIT_OK
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_train_seed_must_agree_with_config(tmp_path, capsys):
    _synth(tmp_path / "ds")
    flags = ["--iters", "0", "--width", "64"]
    assert _train(tmp_path / "ds", tmp_path / "m", "--seed", "3", "--set", "train.seed = 5", *flags) == EXIT_ERROR
    assert "conflicts with --seed 3" in capsys.readouterr().err
    assert not (tmp_path / "m").exists()
    assert _train(tmp_path / "ds", tmp_path / "m", "--seed", "3", "--set", "train.seed = 3", *flags) == EXIT_OK


def test_train_width_mismatch(tmp_path):
    _synth(tmp_path / "ds")
    assert _train(tmp_path / "ds", tmp_path / "m", "--seed", "0", "--width", "128") == EXIT_ERROR


# ---------------------------------------------------------------------------
# segment and eval
# ---------------------------------------------------------------------------


def _line_image(path) -> None:
    image = np.zeros((48, 64), np.uint8)
    image[10:30, 5:15] = 1
    image[10:30, 30:40] = 1
    write_binary_pgm(path, image)


def test_segment_proj_with_overlay(tmp_path):
    _line_image(tmp_path / "line.pgm")
    args = ["segment", "--image", str(tmp_path / "line.pgm"), "--out", str(tmp_path / "s.json")]
    assert main([*args, "--method", "proj", "--overlay", str(tmp_path / "o.pgm")]) == EXIT_OK
    assert len(read_segments_json(tmp_path / "s.json")) == 2
    assert read_pgm(tmp_path / "o.pgm").shape == (48, 64)


def test_segment_blank_image_with_fcn(tmp_path):
    write_binary_pgm(tmp_path / "blank.pgm", np.zeros((48, 64), np.uint8))
    save_checkpoint(build_fcn(ArchitectureSpec(input_width=64), seed=0), tmp_path / "m.ckpt")
    args = ["segment", "--image", str(tmp_path / "blank.pgm"), "--out", str(tmp_path / "s.json")]
    assert main([*args, "--checkpoint", str(tmp_path / "m.ckpt")]) == EXIT_OK
    assert (tmp_path / "s.json").read_text().strip() == "[]"


def test_segment_fcn_needs_checkpoint(tmp_path):
    _line_image(tmp_path / "line.pgm")
    assert main(["segment", "--image", str(tmp_path / "line.pgm"), "--out", str(tmp_path / "s.json")]) == EXIT_ERROR


def test_eval_oracle(tmp_path, capsys):
    _synth(tmp_path / "ds")
    report = tmp_path / "r.csv"
    args = ["eval", "--data", str(tmp_path / "ds"), "--method", "oracle", "--report", str(report)]
    assert main([*args, "--min-acc", "1"]) == EXIT_OK
    assert report.read_text().splitlines()[0] == "# t1=8 t2=0 t3=5"
    assert "mean_acc=1.0000" in capsys.readouterr().out


def test_eval_min_acc_failure(tmp_path):
    _synth(tmp_path / "ds")
    save_checkpoint(build_fcn(ArchitectureSpec(input_width=64), seed=0), tmp_path / "m.ckpt")
    args = ["eval", "--data", str(tmp_path / "ds"), "--checkpoint", str(tmp_path / "m.ckpt")]
    assert main([*args, "--min-acc", "1.01"]) == EXIT_CHECK_FAILED


def test_eval_missing_manifest(tmp_path):
    assert main(["eval", "--data", str(tmp_path / "nothing"), "--method", "oracle"]) == EXIT_ERROR


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def test_gradcheck_list(capsys):
    assert main(["gradcheck", "--list"]) == EXIT_OK
    assert capsys.readouterr().out.split() == list(CHECKS)


@pytest.mark.parametrize("perturb, expected", [("0", EXIT_OK), ("0.05", EXIT_CHECK_FAILED)])
def test_gradcheck_exit_codes(perturb, expected):
    assert main(["gradcheck", "--only", "conv,relu", "--perturb", perturb]) == expected


def test_gradcheck_unknown_name():
    assert main(["gradcheck", "--only", "bogus"]) == EXIT_ERROR
