from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .formats import read_binary_pgm, read_ids, read_labels, read_manifest
from .synth import Sample, intervals_to_mask

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Samples held in memory; masks are always rebuilt from the label intervals."""

    names: list[str]
    images: np.ndarray  # N x H x W uint8, ink = 1
    intervals: list[list[tuple[int, int]]]
    glyph_ids: list[list[int]] = field(default_factory=list)
    header: dict[str, str] = field(default_factory=dict)
    masks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.images.ndim != 3:
            raise DataError(f"dataset images must be N x H x W, got shape {self.images.shape}")
        if len(self.intervals) != len(self.images) or len(self.names) != len(self.images):
            raise DataError("dataset names, images and intervals differ in length")
        if not self.glyph_ids:
            self.glyph_ids = [[] for _ in self.names]
        w = self.images.shape[2]
        if self.names:
            self.masks = np.stack([intervals_to_mask(iv, w) for iv in self.intervals])
        else:
            self.masks = np.zeros((0, w), dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def height(self) -> int:
        return int(self.images.shape[1])

    @property
    def width(self) -> int:
        return int(self.images.shape[2])

    def sample(self, i: int) -> Sample:
        return Sample(self.images[i], list(self.intervals[i]), self.masks[i], list(self.glyph_ids[i]))

    def subset(self, indices: Sequence[int]) -> Dataset:
        idx = list(indices)
        return Dataset(
            names=[self.names[i] for i in idx],
            images=self.images[idx] if idx else self.images[:0],
            intervals=[self.intervals[i] for i in idx],
            glyph_ids=[self.glyph_ids[i] for i in idx],
            header=dict(self.header),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], names: Sequence[str] | None = None) -> Dataset:
        if not samples:
            raise DataError("cannot build a dataset from zero samples")
        return cls(
            names=list(names) if names is not None else [f"{i:06d}" for i in range(len(samples))],
            images=np.stack([s.image for s in samples]).astype(np.uint8),
            intervals=[list(s.intervals) for s in samples],
            glyph_ids=[list(s.glyph_ids) for s in samples],
        )


def _load_one(path: Path) -> Dataset:
    manifest = read_manifest(path)
    root = path if path.is_dir() else path.parent
    images, intervals, ids = [], [], []
    for name in manifest.names:
        image_path = root / f"{name}.pgm"
        if not image_path.exists():
            raise DataError(f"sample {name}: missing {image_path.name}", subject=name)
        images.append(read_binary_pgm(image_path))
        intervals.append(read_labels(root / f"{name}.lab"))
        ids.append(read_ids(root / f"{name}.ids"))

    if images:
        shapes = {im.shape for im in images}
        if len(shapes) > 1:
            raise DataError(f"{root}: samples have differing shapes {sorted(shapes)}")
        stacked = np.stack(images)
    else:
        h = int(manifest.header.get("height", 0))
        w = int(manifest.header.get("width", 0))
        stacked = np.zeros((0, h, w), dtype=np.uint8)

    names = [f"{root.name}/{n}" for n in manifest.names]
    log.debug("loaded %d samples from %s", len(names), root)
    return Dataset(names, stacked, intervals, ids, manifest.header)


def load_dataset(paths: str | Path | Sequence[str | Path]) -> Dataset:
    """Load one dataset directory (or manifest file), or the union of several."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    parts = [_load_one(Path(p)) for p in paths]
    if not parts:
        raise DataError("no dataset paths given")
    if len(parts) == 1:
        return parts[0]

    shapes = {(d.height, d.width) for d in parts if len(d)}
    if len(shapes) > 1:
        raise ConfigurationError(f"cannot merge datasets with line shapes {sorted(shapes)}")
    nonempty = [d for d in parts if len(d)] or parts[:1]
    return Dataset(
        names=[n for d in nonempty for n in d.names],
        images=np.concatenate([d.images for d in nonempty]),
        intervals=[iv for d in nonempty for iv in d.intervals],
        glyph_ids=[g for d in nonempty for g in d.glyph_ids],
        header=dict(parts[0].header),
    )
