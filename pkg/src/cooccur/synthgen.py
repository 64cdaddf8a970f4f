"""Seeded Voronoi archives of (image, label map) pairs, plus their on-disk layout.

Every label map is a nearest-site partition of the pixel grid; every image
pixel is its class's signature colour plus zero-mean uniform noise of standard
deviation ``noise_sigma``, clamped to [0, 1]. All randomness comes from
SplitMix64 streams (see ``prng``) derived from ``master_seed``, so archives
are bit-identical across platforms.

Archive directory layout::

    manifest.tsv      id <TAB> lmap_path <TAB> img_path   (paths relative to dir)
    NNNNN.lmap        LMAP v1
    NNNNN.img         IMG v1: "IMG v1" / "H W channels" / channels*H rows of W floats
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .labelmap import LabelMap, read_label_map, write_label_map
from .prng import SplitMix64, mix64, substream

IMG_MAGIC = "IMG v1"
_SIGNATURE_SALT = 0x5349474E41545552
_MIN_SEPARATION = 0.1


@dataclass(frozen=True)
class SynthConfig:
    num_images: int = 200
    height: int = 32
    width: int = 32
    num_classes: int = 8
    sites: int = 6
    channels: int = 3
    noise_sigma: float = 0.05
    master_seed: int = 0

    def __post_init__(self):
        if self.num_images < 1 or self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError("num_images, height, width and channels must be >= 1")
        if self.sites < 1:
            raise ValueError("sites must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True, eq=False)
class SynthImage:
    image_id: str
    image: np.ndarray  # (channels, H, W)
    label_map: LabelMap


def class_signatures(cfg: SynthConfig, max_draws: int = 100_000) -> np.ndarray:
    """(C, channels) base colours, pairwise max-norm separation >= 0.1."""
    rng = SplitMix64(mix64(cfg.master_seed ^ _SIGNATURE_SALT))
    sigs: list[np.ndarray] = []
    for _ in range(max_draws):
        cand = rng.uniform(cfg.channels)
        if all(np.max(np.abs(cand - s)) >= _MIN_SEPARATION for s in sigs):
            sigs.append(cand)
            if len(sigs) == cfg.num_classes:
                return np.array(sigs)
    raise ValueError(
        f"could not place {cfg.num_classes} signatures in {cfg.channels} channel(s)"
    )


def voronoi_labels(sites: np.ndarray, classes: np.ndarray, h: int, w: int) -> np.ndarray:
    """Class of the nearest site per pixel; ties go to the lowest site index."""
    rr, cc = np.indices((h, w), dtype=np.float64)
    d2 = (rr[None] - sites[:, 0, None, None]) ** 2 + (cc[None] - sites[:, 1, None, None]) ** 2
    return classes[np.argmin(d2, axis=0)]


def generate_one(cfg: SynthConfig, index: int, signatures: np.ndarray) -> SynthImage:
    rng = SplitMix64(substream(cfg.master_seed, index))
    h, w, k = cfg.height, cfg.width, cfg.sites
    u = rng.uniform(2 * k).reshape(k, 2)
    sites = u * np.array([h, w]) - 0.5
    classes = rng.integers(k, cfg.num_classes)
    labels = voronoi_labels(sites, classes, h, w)
    image = signatures[labels].transpose(2, 0, 1).copy()
    if cfg.noise_sigma > 0:
        half_width = cfg.noise_sigma * math.sqrt(3.0)
        noise = (2.0 * rng.uniform(image.size) - 1.0) * half_width
        image = np.clip(image + noise.reshape(image.shape), 0.0, 1.0)
    return SynthImage(f"{index:05d}", image, LabelMap(labels, cfg.num_classes))


def generate(cfg: SynthConfig) -> list[SynthImage]:
    sigs = class_signatures(cfg)
    return [generate_one(cfg, i, sigs) for i in range(cfg.num_images)]


def split(
    ids: Sequence[str], fractions: Sequence[float], seed: int
) -> tuple[list[str], list[str], list[str]]:
    """Shuffled (train, query, test) partition with rounded sizes.

    A partition given a positive fraction must come out non-empty.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("need three non-negative fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    ids = list(ids)
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_query = min(int(round(fractions[1] * n)), n - n_train)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    parts = (
        sorted(shuffled[:n_train]),
        sorted(shuffled[n_train : n_train + n_query]),
        sorted(shuffled[n_train + n_query :]),
    )
    for name, f, part in zip(("train", "query", "test"), fractions, parts):
        if f > 0 and not part:
            raise ValueError(f"empty {name} partition for {n} images")
    return parts


# ---------------------------------------------------------------------------
# IMG v1 and archive directories


def dump_image(image: np.ndarray, sink: TextIO) -> None:
    ch, h, w = image.shape
    sink.write(f"{IMG_MAGIC}\n{h} {w} {ch}\n")
    for plane in image:
        for row in plane:
            sink.write(" ".join(repr(float(v)) for v in row))
            sink.write("\n")


def load_image(source: TextIO, name: str = "<stream>") -> np.ndarray:
    lines = source.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != IMG_MAGIC:
        raise ValueError(f"{name}:1: malformed header, expected '{IMG_MAGIC}'")
    try:
        h, w, ch = (int(t) for t in lines[1].split())
    except (IndexError, ValueError):
        raise ValueError(f"{name}:2: malformed header, expected 'H W channels'") from None
    if min(h, w, ch) < 1:
        raise ValueError(f"{name}:2: empty image")
    body = lines[2:]
    if len(body) != ch * h:
        raise ValueError(f"{name}: expected {ch * h} rows, found {len(body)}")
    rows = []
    for i, line in enumerate(body):
        toks = line.split()
        if len(toks) != w:
            raise ValueError(f"{name}:{i + 3}: row length mismatch ({len(toks)}, expected {w})")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise ValueError(f"{name}:{i + 3}: non-numeric value") from None
    img = np.array(rows, dtype=np.float64).reshape(ch, h, w)
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name}: non-finite pixel value")
    return img


def write_image(image: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_image(image, fh)


def read_image(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return load_image(fh, name=str(path))


def write_archive(out_dir, items: Sequence[SynthImage]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.tsv", "w", encoding="utf-8", newline="\n") as man:
        for it in items:
            lmap, img = f"{it.image_id}.lmap", f"{it.image_id}.img"
            write_label_map(it.label_map, out / lmap)
            write_image(it.image, out / img)
            man.write(f"{it.image_id}\t{lmap}\t{img}\n")
    return out


def read_manifest(archive_dir) -> list[tuple[str, Path, Path]]:
    root = Path(archive_dir)
    path = root / "manifest.tsv"
    entries = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{n}: expected 3 tab-separated fields")
            entries.append((parts[0], root / parts[1], root / parts[2]))
    return entries


def read_archive(archive_dir, ids: Sequence[str] | None = None) -> list[SynthImage]:
    """Load (a subset of) an archive directory in manifest order."""
    wanted = None if ids is None else set(ids)
    items = []
    for image_id, lmap, img in read_manifest(archive_dir):
        if wanted is not None and image_id not in wanted:
            continue
        m = read_label_map(lmap)
        x = read_image(img)
        if x.shape[1:] != m.shape:
            raise ValueError(f"{img}: image size {x.shape[1:]} != label map size {m.shape}")
        items.append(SynthImage(image_id, x, m))
    if wanted is not None:
        missing = wanted - {it.image_id for it in items}
        if missing:
            raise ValueError(f"{archive_dir}: ids not in manifest: {sorted(missing)[:5]}")
    return items


def write_ids(ids: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\n" for i in ids)


def read_ids(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


