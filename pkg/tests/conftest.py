from __future__ import annotations

import numpy as np
import pytest

from fcnseg.dataset import Dataset, load_dataset
from fcnseg.model import ArchitectureSpec, DownBlock, UpBlock
from fcnseg.synth import DisturbanceParams, GlyphAtlas, SynthParams, generate_dataset, make_corpus, make_toy_atlas

LINE_HEIGHT = 16
LINE_WIDTH = 64


def small_spec(width: int = LINE_WIDTH) -> ArchitectureSpec:
    """Four 2x2 pools take a 16px line to height 1; four stride-2 deconvs restore the width."""
    return ArchitectureSpec(
        input_height=LINE_HEIGHT,
        input_width=width,
        down_blocks=[DownBlock(out_channels=4) for _ in range(4)],
        up_blocks=[UpBlock(out_channels=c) for c in (4, 4, 4, 1)],
    )


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture()
def atlas() -> GlyphAtlas:
    """Eight toy glyphs on a 16px line."""
    return make_toy_atlas(seed=5, glyph_count=8, line_height=LINE_HEIGHT)


@pytest.fixture()
def corpus(atlas) -> list[int]:
    return make_corpus(atlas, 200, seed=9)


@pytest.fixture()
def synth_params() -> SynthParams:
    return SynthParams(width=LINE_WIDTH, max_margin=2, spacing=(1, 3))


@pytest.fixture()
def dataset_dir(tmp_path, atlas, corpus, synth_params):
    """Six undisturbed samples written to disk; returns the directory."""
    out = tmp_path / "ds"
    generate_dataset(atlas, "normal", corpus, 6, 11, out, DisturbanceParams.identity(), synth_params)
    return out


@pytest.fixture()
def dataset(dataset_dir) -> Dataset:
    return load_dataset(dataset_dir)
