from __future__ import annotations

import hashlib
import logging
import math
import re
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pydantic
from scipy import ndimage

from .errors import BoundsError, ConfigurationError, DataError, FormatError
from .formats import Manifest, write_binary_pgm, write_ids, write_labels, write_manifest

log = logging.getLogger(__name__)

ATLAS_TAG = "GLYPHATLAS"
ATLAS_VERSION = 1
MIN_SPACING = -2
STYLES = ("regular", "bold", "hollow", "italic")

Content = Literal["normal", "chaotic"]
SpacingSampler = Callable[[np.random.Generator], int]

CROSS = ndimage.generate_binary_structure(2, 1)
EIGHT = np.ones((3, 3), dtype=bool)


# ---------------------------------------------------------------------------
# Glyphs and atlas
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Glyph:
    id: int
    bitmap: np.ndarray  # uint8 {0,1}, height x width
    family: str = "cjk-like"

    @property
    def width(self) -> int:
        return int(self.bitmap.shape[1])

    @property
    def height(self) -> int:
        return int(self.bitmap.shape[0])


def count_components(bitmap: np.ndarray) -> int:
    """Number of 8-connected ink components."""
    return int(ndimage.label(bitmap > 0, structure=EIGHT)[1])


def _tighten(bitmap: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    return np.ascontiguousarray(bitmap[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1], dtype=np.uint8)


@dataclass
class GlyphAtlas:
    glyphs: list[Glyph]
    line_height: int
    _by_id: dict[int, Glyph] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {}
        for g in self.glyphs:
            if g.id in self._by_id:
                raise DataError(f"duplicate glyph id {g.id}", subject=g.id)
            if g.width < 1 or not g.bitmap.any():
                raise DataError(f"glyph {g.id} has no ink", subject=g.id)
            if g.height > self.line_height:
                raise DataError(f"glyph {g.id} is {g.height}px tall, line height is {self.line_height}", subject=g.id)
            self._by_id[g.id] = g

    def __len__(self) -> int:
        return len(self.glyphs)

    def __contains__(self, glyph_id: object) -> bool:
        return glyph_id in self._by_id

    def __getitem__(self, glyph_id: int) -> Glyph:
        try:
            return self._by_id[glyph_id]
        except KeyError:
            raise DataError(f"unknown glyph id {glyph_id}", subject=glyph_id) from None

    def ids(self) -> list[int]:
        return [g.id for g in self.glyphs]

    def disconnected_ids(self) -> list[int]:
        return [g.id for g in self.glyphs if count_components(g.bitmap) >= 2]

    def narrow_ids(self) -> list[int]:
        return [g.id for g in self.glyphs if g.width <= self.line_height // 3]

    def _edge_rows(self, glyph: Glyph, column: int) -> np.ndarray:
        top = (self.line_height - glyph.height) // 2
        return top + np.flatnonzero(glyph.bitmap[:, column])

    def can_touch(self, left: int, right: int) -> bool:
        """True if ``left`` followed by ``right`` at spacing 0 joins ink 8-connectedly."""
        a = self._edge_rows(self[left], -1)
        b = self._edge_rows(self[right], 0)
        return bool((np.abs(a[:, None] - b[None, :]) <= 1).any())

    def to_text(self) -> str:
        lines = [f"{ATLAS_TAG} {ATLAS_VERSION} {self.line_height}"]
        for g in self.glyphs:
            lines.append(f"glyph {g.id} {g.width} {g.height} {g.family}")
            lines += ["".join("1" if v else "0" for v in row) for row in g.bitmap]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("ascii")).hexdigest()


def write_atlas(atlas: GlyphAtlas, path: str | Path) -> None:
    Path(path).write_text(atlas.to_text(), encoding="ascii")


_HEADER_RE = re.compile(rf"^{ATLAS_TAG}\s+(\d+)\s+(\d+)$")
_GLYPH_RE = re.compile(r"^glyph\s+(-?\d+)\s+(\d+)\s+(\d+)\s+(\S+)$")


def read_atlas(path: str | Path) -> GlyphAtlas:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Atlas not found: {path}")
    lines = path.read_text(encoding="ascii").splitlines()

    m = _HEADER_RE.match(lines[0].strip()) if lines else None
    if not m:
        raise FormatError(f"{path}: expected '{ATLAS_TAG} {ATLAS_VERSION} <H>' header", 1)
    if int(m.group(1)) != ATLAS_VERSION:
        raise FormatError(f"{path}: unsupported atlas version {m.group(1)}", 1)
    line_height = int(m.group(2))

    glyphs: list[Glyph] = []
    i = 1
    while i < len(lines):
        stripped = lines[i].strip()
        if not stripped:
            i += 1
            continue
        gm = _GLYPH_RE.match(stripped)
        if not gm:
            raise FormatError(f"{path}: expected 'glyph <id> <width> <height> <family>', got {stripped!r}", i + 1)
        gid, width, height, family = int(gm.group(1)), int(gm.group(2)), int(gm.group(3)), gm.group(4)
        rows = lines[i + 1 : i + 1 + height]
        if len(rows) < height:
            raise FormatError(f"{path}: glyph {gid} is truncated", i + 1)
        for k, row in enumerate(rows):
            if len(row) != width or set(row) - {"0", "1"}:
                raise FormatError(f"{path}: glyph {gid} row {k} must be {width} chars of 0/1", i + 2 + k)
        bitmap = np.array([[c == "1" for c in row] for row in rows], dtype=np.uint8).reshape(height, width)
        glyphs.append(Glyph(gid, bitmap, family))
        i += 1 + height

    return GlyphAtlas(glyphs, line_height)


# ---------------------------------------------------------------------------
# Toy atlas
# ---------------------------------------------------------------------------


def _strokes(rng: np.random.Generator, h: int, w: int, t: int) -> np.ndarray:
    # full-height vertical bars and full-width horizontal bars, so every
    # bitmap is a single component with ink on all four borders
    bm = np.zeros((h, w), dtype=np.uint8)
    t_v = min(t, w)
    for _ in range(int(rng.integers(1, 3 if w >= 3 * t else 2))):
        c = int(rng.integers(0, w - t_v + 1))
        bm[:, c : c + t_v] = 1
    for _ in range(int(rng.integers(1, 4))):
        r = int(rng.integers(0, h - t + 1))
        bm[r : r + t, :] = 1
    return bm


def _make_bitmap(kind: str, rng: np.random.Generator, line_height: int) -> np.ndarray:
    H = line_height
    t_lo = max(2, H // 12)
    t = int(rng.integers(t_lo, max(t_lo, H // 9) + 1))
    gap_lo = max(3, round(H / 10))
    gap = int(rng.integers(gap_lo, max(gap_lo, round(H / 7)) + 1))

    if kind == "narrow":
        h = int(rng.integers(int(H * 0.45), int(H * 0.7) + 1))
        w = int(rng.integers(max(t + 2, H // 8), max(t + 2, H // 3) + 1))
        return _strokes(rng, h, w, t)

    lo, hi = max(int(H * 0.55), 2 * (t + 1) + gap), max(int(H * 0.75), 2 * (t + 1) + gap)
    h = int(rng.integers(lo, hi + 1))
    w = max(lo, h + int(rng.integers(-3, 4)))
    if kind == "square":
        return _strokes(rng, h, w, t)

    # disconnected: two parts split by blank columns, or less often blank rows
    if rng.random() < 2 / 3:
        left = int(rng.integers(t + 1, w - gap - t))
        return np.hstack(
            [_strokes(rng, h, left, t), np.zeros((h, gap), np.uint8), _strokes(rng, h, w - gap - left, t)]
        )
    top = int(rng.integers(t + 1, h - gap - t))
    return np.vstack([_strokes(rng, top, w, t), np.zeros((gap, w), np.uint8), _strokes(rng, h - gap - top, w, t)])


def make_toy_atlas(seed: int, glyph_count: int = 32, line_height: int = 48) -> GlyphAtlas:
    """Pseudo-random glyphs: ~40% disconnected, a quarter narrow latin-like, the rest square."""
    if glyph_count < 8:
        raise ConfigurationError(f"glyph_count must be at least 8, got {glyph_count}")
    if line_height < 16:
        raise ConfigurationError(f"line_height must be at least 16, got {line_height}")
    rng = np.random.default_rng(seed)
    n_disc = max(2, round(glyph_count * 0.4))
    n_narrow = math.ceil(glyph_count / 4)
    kinds = ["disconnected"] * n_disc + ["narrow"] * n_narrow
    kinds += ["square"] * (glyph_count - len(kinds))
    order = rng.permutation(len(kinds))

    glyphs: list[Glyph] = []
    seen: set[tuple[tuple[int, ...], bytes]] = set()
    for gid, k in enumerate(order):
        kind = kinds[k]
        for _ in range(200):
            bm = _make_bitmap(kind, rng, line_height)
            key = (bm.shape, bm.tobytes())
            if key not in seen and (kind != "disconnected" or count_components(bm) >= 2):
                break
        else:
            raise ConfigurationError(f"could not draw {glyph_count} distinct glyphs at line height {line_height}")
        seen.add(key)
        glyphs.append(Glyph(gid, bm, "latin-like" if kind == "narrow" else "cjk-like"))

    log.debug("toy atlas seed=%d: %d glyphs, %d disconnected", seed, glyph_count, n_disc)
    return GlyphAtlas(glyphs, line_height)


def _restyle(bitmap: np.ndarray, style: str) -> np.ndarray:
    if style == "regular":
        return bitmap.copy()
    if style == "bold":
        out = np.pad(bitmap, ((0, 0), (0, 1)))
        out[:, 1:] |= bitmap
        return _tighten(out)
    if style == "hollow":
        padded = np.pad(bitmap, 1).astype(bool)
        outline = padded & ~ndimage.binary_erosion(padded, structure=CROSS)
        return _tighten(outline.astype(np.uint8))
    if style == "italic":
        h, w = bitmap.shape
        shifts = [round((h - 1 - r) * 0.25) for r in range(h)]
        out = np.zeros((h, w + max(shifts)), dtype=np.uint8)
        for r, s in enumerate(shifts):
            out[r, s : s + w] = bitmap[r]
        return _tighten(out)
    raise ConfigurationError(f"unknown style {style!r}, expected one of {', '.join(STYLES)}")


def restyle_atlas(atlas: GlyphAtlas, style: str) -> GlyphAtlas:
    glyphs = [Glyph(g.id, _restyle(g.bitmap, style), g.family) for g in atlas.glyphs]
    return GlyphAtlas(glyphs, atlas.line_height)


def make_corpus(atlas: GlyphAtlas, length: int, seed: int) -> list[int]:
    """Toy running text: a first-order Markov chain with Zipf-like unigram weights.

    Each glyph prefers three successors, so "normal" text carries local
    regularities that a global shuffle destroys.
    """
    if length < 0:
        raise ConfigurationError(f"corpus length must be non-negative, got {length}")
    ids = np.array(atlas.ids())
    n = len(ids)
    rng = np.random.default_rng(seed)
    ranks = rng.permutation(n)
    unigram = 1.0 / (ranks + 1.0)
    unigram /= unigram.sum()
    transition = np.tile(0.5 * unigram, (n, 1))
    for i in range(n):
        transition[i, rng.choice(n, size=min(3, n), replace=False)] += 0.5 / min(3, n)

    out: list[int] = []
    state = int(rng.choice(n, p=unigram))
    for _ in range(length):
        out.append(int(ids[state]))
        state = int(rng.choice(n, p=transition[state]))
    return out


# ---------------------------------------------------------------------------
# Composition and disturbance
# ---------------------------------------------------------------------------


class DisturbanceParams(pydantic.BaseModel):
    """Random degradations applied to a clean line, in order.

    A blur range of (0, 0) disables blurring; the morphology kernels are
    fixed 3x3 crosses.
    """

    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    rotation_deg: tuple[float, float] = (-2.0, 2.0)
    erosion_prob: float = pydantic.Field(0.5, ge=0.0, le=1.0)
    dilation_prob: float = pydantic.Field(0.5, ge=0.0, le=1.0)
    blur_sigma: tuple[float, float] = (0.5, 1.5)
    threshold: float = pydantic.Field(160.0, gt=0.0, lt=255.0)

    @pydantic.field_validator("rotation_deg", "blur_sigma")
    @classmethod
    def _ordered(cls, v: tuple[float, float]) -> tuple[float, float]:
        if v[0] > v[1]:
            raise ValueError(f"range {v} is reversed")
        return v

    @pydantic.field_validator("blur_sigma")
    @classmethod
    def _non_negative(cls, v: tuple[float, float]) -> tuple[float, float]:
        if v[0] < 0:
            raise ValueError("blur sigma must be >= 0")
        return v

    @classmethod
    def identity(cls) -> DisturbanceParams:
        return cls(rotation_deg=(0.0, 0.0), erosion_prob=0.0, dilation_prob=0.0, blur_sigma=(0.0, 0.0))


class SynthParams(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    width: pydantic.PositiveInt = 2048
    spacing: tuple[int, int] = (MIN_SPACING, 6)
    max_margin: pydantic.NonNegativeInt = 8
    glyph_count: int = pydantic.Field(32, ge=8)
    corpus_length: pydantic.NonNegativeInt = 20000
    styles: tuple[str, ...] = ("regular",)
    workers: pydantic.PositiveInt = 1

    @pydantic.field_validator("spacing")
    @classmethod
    def _spacing(cls, v: tuple[int, int]) -> tuple[int, int]:
        if v[0] < MIN_SPACING or v[0] > v[1]:
            raise ValueError(f"spacing range {v} must satisfy {MIN_SPACING} <= lo <= hi")
        return v

    @pydantic.field_validator("styles")
    @classmethod
    def _styles(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        bad = [s for s in v if s not in STYLES]
        if bad or not v:
            raise ValueError(f"styles must be a non-empty subset of {STYLES}, got {v}")
        return v


@dataclass
class Sample:
    image: np.ndarray  # H x W uint8, ink = 1
    intervals: list[tuple[int, int]]
    mask: np.ndarray  # W uint8
    glyph_ids: list[int] = field(default_factory=list)


def uniform_spacing(lo: int, hi: int) -> SpacingSampler:
    def sample(rng: np.random.Generator) -> int:
        return int(rng.integers(lo, hi + 1))

    return sample


def compose_line(
    atlas: GlyphAtlas,
    glyph_ids: Sequence[int],
    spacing_sampler: SpacingSampler,
    margin: int,
    rng: np.random.Generator,
    width: int = 2048,
    overflow: Literal["truncate", "error"] = "truncate",
) -> tuple[np.ndarray, list[tuple[int, int]], list[int]]:
    """Plot glyphs left to right on a white line.

    Returns the grayscale image (ink 0 on 255), each placed glyph's ink
    interval, and the ids that were actually placed.
    """
    H = atlas.line_height
    gray = np.full((H, width), 255, dtype=np.uint8)
    intervals: list[tuple[int, int]] = []
    placed: list[int] = []
    x = margin
    for k, gid in enumerate(glyph_ids):
        g = atlas[gid]
        if k > 0:
            spacing = int(spacing_sampler(rng))
            if spacing < MIN_SPACING:
                raise ConfigurationError(f"spacing {spacing} is below {MIN_SPACING}")
            x = max(0, x + spacing)
        if x + g.width > width:
            if overflow == "error":
                raise BoundsError(f"glyph {gid} at column {x} overflows line width {width}")
            break
        top = (H - g.height) // 2
        region = gray[top : top + g.height, x : x + g.width]
        np.minimum(region, np.where(g.bitmap > 0, 0, 255).astype(np.uint8), out=region)
        cols = np.flatnonzero(g.bitmap.any(axis=0))
        intervals.append((x + int(cols[0]), x + int(cols[-1])))
        placed.append(gid)
        x += g.width
    return gray, intervals, placed


def intervals_to_mask(intervals: Sequence[tuple[int, int]], width: int) -> np.ndarray:
    mask = np.zeros(width, dtype=np.uint8)
    for m, n in intervals:
        if not 0 <= m <= n < width:
            raise BoundsError(f"interval [{m}, {n}] is outside [0, {width})")
        mask[m] = mask[n] = 1
    return mask


def disturb(
    gray: np.ndarray,
    intervals: Sequence[tuple[int, int]],
    params: DisturbanceParams,
    rng: np.random.Generator,
    glyph_ids: Sequence[int] | None = None,
) -> Sample:
    """Rotate, erode, dilate, blur, then binarize; margins follow each character's ink.

    Random draws happen in a fixed order (angle, erosion coin, dilation coin,
    sigma) whether or not the operation ends up applied.
    """
    h, w = gray.shape
    theta = float(rng.uniform(*params.rotation_deg))
    erode = bool(rng.random() < params.erosion_prob)
    dilate = bool(rng.random() < params.dilation_prob)
    sigma = float(rng.uniform(*params.blur_sigma))

    ink = (255 - gray.astype(np.int16)).astype(np.uint8)
    dark = gray < params.threshold
    masks = np.zeros((len(intervals), h, w), dtype=bool)
    for k, (m, n) in enumerate(intervals):
        masks[k, :, m : n + 1] = dark[:, m : n + 1]

    if theta != 0.0:
        stack = np.concatenate([ink[None], masks.astype(np.uint8)])
        stack = ndimage.rotate(stack, theta, axes=(2, 1), reshape=False, order=0, mode="constant", cval=0)
        ink, masks = stack[0], stack[1:].astype(bool)
    if erode:
        ink = ndimage.grey_erosion(ink, footprint=CROSS, mode="constant", cval=0)
    if dilate:
        ink = ndimage.grey_dilation(ink, footprint=CROSS, mode="constant", cval=0)
    level = ink.astype(np.float64)
    if sigma > 0.0:
        radius = math.ceil(3.0 * sigma)
        level = ndimage.gaussian_filter(level, sigma, mode="nearest", truncate=radius / sigma)
    image = ((255.0 - level) < params.threshold).astype(np.uint8)

    label = np.zeros((h, w), dtype=np.int32)
    for k in reversed(range(len(intervals))):
        label[masks[k]] = k + 1
    nearest = label
    if label.any() and not label.all():
        iy, ix = ndimage.distance_transform_edt(label == 0, return_distances=False, return_indices=True)
        nearest = label[iy, ix]

    inked = image.astype(bool)
    kept: list[tuple[tuple[int, int], int]] = []
    for k in range(len(intervals)):
        cols = np.flatnonzero((inked & (masks[k] | (nearest == k + 1))).any(axis=0))
        if cols.size:
            kept.append(((int(cols[0]), int(cols[-1])), k))
    kept.sort()
    new_intervals = [iv for iv, _ in kept]
    ids = [glyph_ids[k] for _, k in kept] if glyph_ids is not None else []
    return Sample(image, new_intervals, intervals_to_mask(new_intervals, w), ids)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def synthesize_sample(
    atlas: GlyphAtlas,
    corpus: Sequence[int],
    params: DisturbanceParams,
    synth: SynthParams,
    rng: np.random.Generator,
) -> Sample:
    """One line: random corpus offset, random left margin, then disturbance."""
    start = int(rng.integers(len(corpus)))
    margin = int(rng.integers(0, synth.max_margin + 1))
    narrowest = min(g.width for g in atlas.glyphs)
    take = synth.width // max(1, narrowest + synth.spacing[0]) + 2
    ids = [corpus[(start + i) % len(corpus)] for i in range(take)]
    gray, intervals, placed = compose_line(
        atlas, ids, uniform_spacing(*synth.spacing), margin, rng, width=synth.width
    )
    return disturb(gray, intervals, params, rng, placed)


def chaotic_order(corpus: Sequence[int], seed: int) -> list[int]:
    """Global shuffle of the running text with the dataset seed."""
    return [int(g) for g in np.random.default_rng(seed).permutation(np.asarray(corpus, dtype=np.int64))]


def _render(
    index: int,
    seed: int,
    styled: dict[str, GlyphAtlas],
    corpus: Sequence[int],
    params: DisturbanceParams,
    synth: SynthParams,
    out: Path,
) -> str:
    rng = np.random.default_rng([seed, index])
    style = synth.styles[int(rng.integers(len(synth.styles)))] if len(synth.styles) > 1 else synth.styles[0]
    sample = synthesize_sample(styled[style], corpus, params, synth, rng)
    name = f"{index:06d}"
    write_binary_pgm(out / f"{name}.pgm", sample.image)
    write_labels(out / f"{name}.lab", sample.intervals)
    write_ids(out / f"{name}.ids", sample.glyph_ids)
    return name


def generate_dataset(
    atlas: GlyphAtlas,
    content: Content,
    corpus: Sequence[int],
    count: int,
    seed: int,
    out_dir: str | Path,
    params: DisturbanceParams | None = None,
    synth: SynthParams | None = None,
) -> Manifest:
    """Write ``count`` samples plus ``manifest.txt`` and ``atlas.txt`` into ``out_dir``.

    Sample ``i`` draws only from ``default_rng([seed, i])``, so the output
    does not depend on ``synth.workers``.
    """
    params = params or DisturbanceParams()
    synth = synth or SynthParams()
    if content not in ("normal", "chaotic"):
        raise ConfigurationError(f"content must be 'normal' or 'chaotic', got {content!r}")
    if count < 0:
        raise ConfigurationError(f"count must be non-negative, got {count}")
    for gid in corpus:
        if gid not in atlas:
            raise DataError(f"unknown glyph id {gid} in corpus", subject=gid)
    if count and not len(corpus):
        raise DataError("corpus is empty")

    sequence = chaotic_order(corpus, seed) if content == "chaotic" else [int(g) for g in corpus]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    styled = {s: restyle_atlas(atlas, s) for s in synth.styles}

    def render(i: int) -> str:
        return _render(i, seed, styled, sequence, params, synth, out)

    if synth.workers > 1:
        with ThreadPoolExecutor(max_workers=synth.workers) as pool:
            names = list(pool.map(render, range(count)))
    else:
        names = [render(i) for i in range(count)]

    write_atlas(atlas, out / "atlas.txt")
    header = {
        "seed": str(seed),
        "content": content,
        "count": str(count),
        "width": str(synth.width),
        "height": str(atlas.line_height),
        "styles": ",".join(synth.styles),
        "atlas_sha256": atlas.digest(),
        "disturb": params.model_dump_json(),
    }
    manifest = Manifest(names=names, header=header)
    write_manifest(out / "manifest.txt", manifest)
    log.info("wrote %d samples to %s", count, out)
    return manifest
