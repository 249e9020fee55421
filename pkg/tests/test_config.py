from __future__ import annotations

import pytest

from fcnseg.config import RunConfig, build_config, parse_assignment, parse_config
from fcnseg.errors import ConfigurationError


def test_defaults():
    cfg = build_config()
    assert cfg == RunConfig()
    assert (cfg.match.t1, cfg.match.t2, cfg.match.t3) == (8, 0, 5)
    assert cfg.post.threshold == 0.5
    assert cfg.model.spec().input_width == 2048


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# desk run\n"
        "train.iterations = 10\n"
        "-- drops as a comma list\n"
        "train.lr_drops = 4, 8\n"
        "\n"
        "disturb.blur_sigma = 0, 0\n"
        "synth.styles = regular,hollow\n"
    )
    overrides = parse_config(path)
    assert overrides["train"] == {"iterations": "10", "lr_drops": ("4", "8")}
    cfg = build_config(path)
    assert cfg.train.iterations == 10
    assert cfg.train.drops == (4, 8)
    assert cfg.disturb.blur_sigma == (0.0, 0.0)
    assert cfg.synth.styles == ("regular", "hollow")


def test_layer_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.iterations = 10\ntrain.seed = 4\n")
    cfg = build_config(path, ["train.iterations = 20"], {"train": {"iterations": 30, "seed": None}})
    assert (cfg.train.iterations, cfg.train.seed) == (30, 4)
    cfg = build_config(path, ["train.iterations = 20"])
    assert cfg.train.iterations == 20


def test_none_value():
    assert parse_assignment("train.lr_drops = none") == ("train", "lr_drops", None)


@pytest.mark.parametrize(
    "text",
    ["nosection = 3", "bogus.key = 1", "train.bogus = 1", "train.iterations"],
)
def test_bad_assignments(text):
    with pytest.raises(ConfigurationError):
        parse_assignment(text)


def test_bad_line_names_the_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.iterations = 1\nwhat is this\n")
    with pytest.raises(ConfigurationError, match=r"run\.cfg:2"):
        parse_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        build_config(tmp_path / "absent.cfg")


def test_invalid_values_become_configuration_errors():
    with pytest.raises(ConfigurationError, match="batch_size"):
        build_config(sets=["train.batch_size = 0"])
    with pytest.raises(ConfigurationError):
        build_config(sets=["post.threshold = 1.5"])
