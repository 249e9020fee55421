from __future__ import annotations

from collections.abc import Collection, Sequence

import numpy as np
import pydantic

from .errors import BoundsError, ShapeError
from .model import FcnModel, predict

Segment = tuple[int, int]


class PostprocParams(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")

    threshold: float = pydantic.Field(0.5, gt=0.0, lt=1.0)
    min_ink_columns: pydantic.NonNegativeInt = 2


DEFAULT_POSTPROC = PostprocParams()


# ---------------------------------------------------------------------------
# Four post-processing steps
# ---------------------------------------------------------------------------


def binarize_probs(p: np.ndarray, thr: float = 0.5) -> np.ndarray:
    return np.asarray(p) > thr


def runs_to_splitpoints(b: np.ndarray) -> list[int]:
    """Center of every maximal true run, rounding down on even lengths."""
    edges = np.diff(np.concatenate([[0], np.asarray(b, dtype=np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [int(c) for c in (starts + ends) // 2]


def splitpoints_to_candidates(points: Sequence[int]) -> list[Segment]:
    return [(int(a), int(b)) for a, b in zip(points[:-1], points[1:])]


def _ink_prefix(image: np.ndarray) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(np.asarray(image).any(axis=0))])


def _interior_ink(prefix: np.ndarray, left: int, right: int) -> int:
    return max(0, int(prefix[right] - prefix[left + 1]))


def discard_blank(
    image: np.ndarray, candidates: Sequence[Segment], params: PostprocParams = DEFAULT_POSTPROC
) -> list[Segment]:
    """Keep candidates with at least ``min_ink_columns`` ink-bearing columns strictly between their ends.

    The end columns are split points shared with the neighbouring candidate,
    so a gap candidate between two glyphs whose ends touch ink is still blank.
    """
    prefix = _ink_prefix(image)
    width = prefix.shape[0] - 1
    kept = []
    for left, right in candidates:
        if not 0 <= left <= right < width:
            raise BoundsError(f"candidate [{left}, {right}] is outside [0, {width})")
        if _interior_ink(prefix, left, right) >= params.min_ink_columns:
            kept.append((left, right))
    return kept


def segment_probs(p: np.ndarray, image: np.ndarray, params: PostprocParams = DEFAULT_POSTPROC) -> list[Segment]:
    points = runs_to_splitpoints(binarize_probs(p, params.threshold))
    return discard_blank(image, splitpoints_to_candidates(points), params)


def segment_line(model: FcnModel, image: np.ndarray, params: PostprocParams = DEFAULT_POSTPROC) -> list[Segment]:
    spec = model.spec
    if image.shape != (spec.input_height, spec.input_width):
        raise ShapeError(f"image is {image.shape}, model expects {(spec.input_height, spec.input_width)}")
    p = predict(model, image[None])[0]
    return segment_probs(p, image, params)


# ---------------------------------------------------------------------------
# Projection-profile baseline
# ---------------------------------------------------------------------------


def proj_segment(
    image: np.ndarray, blank_run_min: int = 1, params: PostprocParams = DEFAULT_POSTPROC
) -> list[Segment]:
    """Split every run of ink-free columns in the middle.

    Virtual split points sit just outside both image edges. The blank test
    runs on the unclipped candidate, so an edge glyph's first or last column
    still counts; kept candidates are then clipped back into the image.
    """
    width = image.shape[1]
    prefix = _ink_prefix(image)
    blank = np.diff(prefix) == 0
    edges = np.diff(np.concatenate([[0], blank.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    long_enough = ends - starts + 1 >= blank_run_min
    centers = (starts[long_enough] + ends[long_enough]) // 2
    points = [-1, *(int(c) for c in centers), width]
    return [
        (max(0, a), min(width - 1, b))
        for a, b in splitpoints_to_candidates(points)
        if _interior_ink(prefix, a, b) >= params.min_ink_columns
    ]


# ---------------------------------------------------------------------------
# Overlay
# ---------------------------------------------------------------------------

DENSE, SPARSE = 2, 4
MARK = 128


def render_overlay(
    image: np.ndarray,
    segments: Sequence[Segment],
    truths: Sequence[Segment] | None = None,
    matched: Collection[int] | None = None,
) -> np.ndarray:
    """Grayscale inspection image: ink black, boundaries as dotted mid-gray columns.

    With ``truths`` the predictions occupy the top half and the truths the
    bottom half. Predictions listed in ``matched`` use a dense dot pattern,
    the rest a sparse one.
    """
    out = np.where(np.asarray(image) > 0, 0, 255).astype(np.uint8)
    h = out.shape[0]
    split = h // 2 if truths is not None else h
    for k, (left, right) in enumerate(segments):
        step = DENSE if matched is None or k in matched else SPARSE
        out[0:split:step, [left, right]] = MARK
    for left, right in truths or ():
        out[split:h:DENSE, [left, right]] = MARK
    return out
