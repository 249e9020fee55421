from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, FormatError

MANIFEST_TAG = "# fcnseg-manifest 1"


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Binary P5, maxval 255."""
    Image.fromarray(np.ascontiguousarray(gray, dtype=np.uint8)).save(path, format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Image not found: {path}", subject=path.stem)
    try:
        with Image.open(path) as img:
            if img.format != "PPM":
                raise FormatError(f"{path} is {img.format}, expected PGM", 0)
            return np.asarray(img.convert("L"), dtype=np.uint8).copy()
    except UnidentifiedImageError as e:
        raise FormatError(f"{path} is not a readable PGM image", 0) from e


def write_binary_pgm(path: str | Path, image: np.ndarray) -> None:
    """Ink (1) is stored black (0), background white (255)."""
    write_pgm(path, np.where(image > 0, 0, 255).astype(np.uint8))


def read_binary_pgm(path: str | Path) -> np.ndarray:
    return (read_pgm(path) < 128).astype(np.uint8)


# ---------------------------------------------------------------------------
# Label files: one "m n" pair per character, ascending
# ---------------------------------------------------------------------------


def write_labels(path: str | Path, intervals: list[tuple[int, int]]) -> None:
    Path(path).write_text("".join(f"{m} {n}\n" for m, n in intervals), encoding="ascii")


def read_labels(path: str | Path) -> list[tuple[int, int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Label file not found: {path}", subject=path.stem)
    intervals: list[tuple[int, int]] = []
    for lineno, line in enumerate(path.read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or not all(p.lstrip("-").isdigit() for p in parts):
            raise FormatError(f"{path}: expected 'm n', got {line!r}", lineno)
        m, n = int(parts[0]), int(parts[1])
        if m > n:
            raise FormatError(f"{path}: interval {m} {n} is reversed", lineno)
        intervals.append((m, n))
    return intervals


def write_ids(path: str | Path, glyph_ids: list[int]) -> None:
    Path(path).write_text("".join(f"{g}\n" for g in glyph_ids), encoding="ascii")


def read_ids(path: str | Path) -> list[int]:
    path = Path(path)
    if not path.exists():
        return []
    try:
        return [int(line) for line in path.read_text(encoding="ascii").split()]
    except ValueError as e:
        raise FormatError(f"{path}: glyph ids must be integers", 0) from e


# ---------------------------------------------------------------------------
# Manifest: "# key=value" header lines, then one sample basename per line
# ---------------------------------------------------------------------------


@dataclass
class Manifest:
    names: list[str] = field(default_factory=list)
    header: dict[str, str] = field(default_factory=dict)


def write_manifest(path: str | Path, manifest: Manifest) -> None:
    lines = [MANIFEST_TAG]
    lines += [f"# {k}={v}" for k, v in manifest.header.items()]
    lines += manifest.names
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    if not path.exists():
        raise DataError(f"Manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_TAG:
        raise FormatError(f"{path}: missing {MANIFEST_TAG!r} header", 1)
    manifest = Manifest()
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            manifest.header[key.strip()] = value.strip()
        elif line.strip():
            manifest.names.append(line.strip())
    return manifest


# ---------------------------------------------------------------------------
# Segment output
# ---------------------------------------------------------------------------


def write_segments_json(path: str | Path, segments: list[tuple[int, int]]) -> None:
    Path(path).write_text(json.dumps([[int(a), int(b)] for a, b in segments]) + "\n", encoding="utf-8")


def read_segments_json(path: str | Path) -> list[tuple[int, int]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(int(a), int(b)) for a, b in data]
