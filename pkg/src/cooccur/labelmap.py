"""Pixel-level class maps and the per-class region statistics built on them.

A class's "region" is the union of every pixel carrying that class id, even
when the pixels are spatially disconnected. Pixel (r, c) sits at coordinate
(r, c) with the origin at the top-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

LMAP_MAGIC = "LMAP v1"


class LabelMapError(ValueError):
    """Malformed or inconsistent label-map data."""


class NoRegionError(LabelMapError):
    """A statistic was requested for a class that occupies no pixel."""


@dataclass(frozen=True)
class LabelSet:
    num_classes: int
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise LabelMapError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.names is not None and len(self.names) != self.num_classes:
            raise LabelMapError(
                f"{len(self.names)} class names given for {self.num_classes} classes"
            )


@dataclass(frozen=True, eq=False)
class LabelMap:
    """An H x W grid of class ids in [0, num_classes)."""

    pixels: np.ndarray
    num_classes: int

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise LabelMapError("empty map")
        if not np.issubdtype(px.dtype, np.integer):
            raise LabelMapError(f"pixel ids must be integers, got dtype {px.dtype}")
        if self.num_classes < 1:
            raise LabelMapError(f"num_classes must be >= 1, got {self.num_classes}")
        lo, hi = int(px.min()), int(px.max())
        if lo < 0 or hi >= self.num_classes:
            bad = lo if lo < 0 else hi
            raise LabelMapError(
                f"class id out of range: {bad} not in [0, {self.num_classes})"
            )
        px = px.astype(np.int64, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None


@dataclass(frozen=True)
class RegionStats:
    """Size and centroid for every class present in a map."""

    sizes: dict[int, int]
    centroids: dict[int, tuple[float, float]] = field(repr=False)


def load_label_map(source: TextIO, name: str = "<stream>") -> LabelMap:
    """Parse an LMAP v1 text stream.

    Layout: ``LMAP v1``, then ``H W C``, then H rows of W ids.
    """
    lines = source.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != LMAP_MAGIC:
        raise LabelMapError(f"{name}:1: malformed header, expected '{LMAP_MAGIC}'")
    if len(lines) < 2:
        raise LabelMapError(f"{name}:2: malformed header, missing 'H W C' line")
    try:
        h, w, c = (int(t) for t in lines[1].split())
    except ValueError:
        raise LabelMapError(f"{name}:2: malformed header, expected 'H W C'") from None
    if h < 1 or w < 1:
        raise LabelMapError(f"{name}:2: empty map ({h}x{w})")
    if c < 1:
        raise LabelMapError(f"{name}:2: malformed header, C must be >= 1")
    body = lines[2:]
    if len(body) != h:
        raise LabelMapError(f"{name}: expected {h} rows, found {len(body)}")
    rows = []
    for i, line in enumerate(body):
        toks = line.split()
        if len(toks) != w:
            raise LabelMapError(
                f"{name}:{i + 3}: row length mismatch ({len(toks)} ids, expected {w})"
            )
        try:
            row = [int(t) for t in toks]
        except ValueError:
            raise LabelMapError(f"{name}:{i + 3}: non-integer class id") from None
        for v in row:
            if not 0 <= v < c:
                raise LabelMapError(
                    f"{name}:{i + 3}: class id out of range: {v} not in [0, {c})"
                )
        rows.append(row)
    return LabelMap(np.array(rows, dtype=np.int64), c)


def dump_label_map(m: LabelMap, sink: TextIO) -> None:
    sink.write(f"{LMAP_MAGIC}\n{m.height} {m.width} {m.num_classes}\n")
    for row in m.pixels:
        sink.write(" ".join(str(int(v)) for v in row))
        sink.write("\n")


def read_label_map(path) -> LabelMap:
    with open(path, encoding="utf-8", newline="\n") as fh:
        return load_label_map(fh, name=str(path))


def write_label_map(m: LabelMap, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_label_map(m, fh)


def _check_class(m: LabelMap, cls: int) -> None:
    if not 0 <= cls < m.num_classes:
        raise LabelMapError(f"class id out of range: {cls} not in [0, {m.num_classes})")


def class_sizes(m: LabelMap) -> np.ndarray:
    """Pixel count of every class, length num_classes."""
    return np.bincount(m.pixels.ravel(), minlength=m.num_classes)


def labels_present(m: LabelMap, ls: Optional[LabelSet] = None) -> np.ndarray:
    """Binary presence vector y with y[n] = 1 iff class n covers a pixel."""
    if ls is not None and ls.num_classes != m.num_classes:
        raise LabelMapError(
            f"label set has {ls.num_classes} classes, map has {m.num_classes}"
        )
    return (class_sizes(m) > 0).astype(np.int64)


def region_size(m: LabelMap, cls: int) -> int:
    _check_class(m, cls)
    return int(np.count_nonzero(m.pixels == cls))


def region_centroid(m: LabelMap, cls: int) -> tuple[float, float]:
    """Mean (row, col) over all pixels of ``cls``."""
    _check_class(m, cls)
    rows, cols = np.nonzero(m.pixels == cls)
    if rows.size == 0:
        raise NoRegionError(f"no region for class {cls}")
    return float(rows.mean()), float(cols.mean())


def region_distance(m: LabelMap, p: int, q: int) -> float:
    """Euclidean distance between the centroids of classes p and q."""
    rp, cp = region_centroid(m, p)
    if p == q:
        return 0.0
    rq, cq = region_centroid(m, q)
    return math.hypot(rp - rq, cp - cq)


def region_stats(m: LabelMap) -> RegionStats:
    """Sizes and centroids of all present classes in one pass."""
    flat = m.pixels.ravel()
    counts = np.bincount(flat, minlength=m.num_classes)
    rr, cc = np.indices(m.shape)
    row_sum = np.bincount(flat, weights=rr.ravel(), minlength=m.num_classes)
    col_sum = np.bincount(flat, weights=cc.ravel(), minlength=m.num_classes)
    sizes, cents = {}, {}
    for k in np.flatnonzero(counts):
        k = int(k)
        sizes[k] = int(counts[k])
        cents[k] = (row_sum[k] / counts[k], col_sum[k] / counts[k])
    return RegionStats(sizes, cents)


def from_rows(rows: Sequence[Sequence[int]], num_classes: int) -> LabelMap:
    return LabelMap(np.asarray(rows, dtype=np.int64), num_classes)
