"""Per-image class co-occurrence graphs and their adjacency matrices.

Edge weights between present classes p and q:

* ``binary``:  1
* ``literal``: s(p) * s(q) / n_s * (1 - d(p, q) / n_d)
* ``scaled``:  target_scale * literal

where s is the region size and d the centroid distance. By default
n_s = H*W and n_d = sqrt(H**2 + W**2), the largest values s and d can take
on an H x W map, and target_scale = 4 / (H*W), which puts every off-diagonal
scaled weight in [0, 1]. Diagonal (self-edge) weights reduce to
4 * (s / (H*W))**2 and exceed 1 only for a class covering more than half the
image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .labelmap import LabelMap, region_stats

Mode = Literal["binary", "literal", "scaled"]
MODES = ("binary", "literal", "scaled")


@dataclass(frozen=True)
class WeightConfig:
    """Edge-weight recipe. ``None`` normalizers resolve per map shape.

    ``normalizer="attainable"`` uses the image-size maxima described in the
    module docstring; ``"image"`` uses the largest size and the largest
    pairwise distance among the classes actually present.
    """

    mode: Mode = "scaled"
    n_s: Optional[float] = None
    n_d: Optional[float] = None
    target_scale: Optional[float] = None
    self_edges: bool = True
    normalizer: Literal["attainable", "image"] = "attainable"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if self.normalizer not in ("attainable", "image"):
            raise ValueError(f"unknown normalizer {self.normalizer!r}")
        for name in ("n_s", "n_d", "target_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0, got {v}")

    def resolve(self, m: LabelMap, sizes=None, dists=None) -> tuple[float, float, float]:
        """(n_s, n_d, target_scale) for a concrete map."""
        h, w = m.shape
        if self.normalizer == "image" and sizes is not None:
            n_s = self.n_s or float(max(sizes))
            d_max = max(dists) if dists else 0.0
            n_d = self.n_d or (d_max if d_max > 0 else 1.0)
        else:
            n_s = self.n_s or float(h * w)
            n_d = self.n_d or math.sqrt(h * h + w * w)
        scale = self.target_scale or 4.0 / (h * w)
        return n_s, n_d, scale


@dataclass(frozen=True)
class RegionGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    weights: dict[tuple[int, int], float]

    def weight(self, p: int, q: int) -> float:
        return self.weights.get((min(p, q), max(p, q)), 0.0)


def _pair_terms(m: LabelMap, cfg: WeightConfig):
    st = region_stats(m)
    present = sorted(st.sizes)
    dist = {}
    for i, p in enumerate(present):
        for q in present[i:]:
            if p == q:
                dist[p, q] = 0.0
            else:
                (rp, cp), (rq, cq) = st.centroids[p], st.centroids[q]
                dist[p, q] = math.hypot(rp - rq, cp - cq)
    n_s, n_d, scale = cfg.resolve(m, list(st.sizes.values()), list(dist.values()))
    return st, present, dist, (n_s, n_d, scale)


def _weight(cfg: WeightConfig, sp: int, sq: int, d: float, norms) -> float:
    if cfg.mode == "binary":
        return 1.0
    n_s, n_d, scale = norms
    w = (sp * sq / n_s) * (1.0 - d / n_d)
    return scale * w if cfg.mode == "scaled" else w


def edge_weight(m: LabelMap, p: int, q: int, cfg: WeightConfig = WeightConfig()) -> float:
    """Weight of the (p, q) edge; 0 when either class is absent."""
    for k in (p, q):
        if not 0 <= k < m.num_classes:
            raise ValueError(f"class id out of range: {k} not in [0, {m.num_classes})")
    if p == q and not cfg.self_edges:
        return 0.0
    st, _, dist, norms = _pair_terms(m, cfg)
    if p not in st.sizes or q not in st.sizes:
        return 0.0
    a, b = min(p, q), max(p, q)
    return _weight(cfg, st.sizes[p], st.sizes[q], dist[a, b], norms)


def build_graph(m: LabelMap, cfg: WeightConfig = WeightConfig()) -> RegionGraph:
    """Nodes are the present classes; one edge per unordered pair of them."""
    st, present, dist, norms = _pair_terms(m, cfg)
    edges, weights = [], {}
    for (p, q), d in dist.items():
        if p == q and not cfg.self_edges:
            continue
        edges.append((p, q))
        weights[p, q] = _weight(cfg, st.sizes[p], st.sizes[q], d, norms)
    return RegionGraph(tuple(present), tuple(edges), weights)


def adjacency(g: RegionGraph, num_classes: int) -> np.ndarray:
    """Dense symmetric C x C matrix, zero off the edge set."""
    a = np.zeros((num_classes, num_classes), dtype=np.float64)
    for p, q in g.edges:
        if max(p, q) >= num_classes or min(p, q) < 0:
            raise ValueError(f"node id out of range for C={num_classes}: {(p, q)}")
        a[p, q] = a[q, p] = g.weights[p, q]
    return a


def adjacency_of(m: LabelMap, cfg: WeightConfig = WeightConfig()) -> np.ndarray:
    return adjacency(build_graph(m, cfg), m.num_classes)


def flatten(a: np.ndarray) -> np.ndarray:
    """Row-major vectorisation."""
    return np.asarray(a, dtype=np.float64).reshape(-1).copy()


def unflatten(v: np.ndarray, num_classes: Optional[int] = None) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    c = num_classes if num_classes is not None else math.isqrt(v.size)
    if c * c != v.size:
        raise ValueError(f"length {v.size} is not a square class count")
    return v.reshape(c, c).copy()


def graph_rows(image_id: str, a: np.ndarray):
    """Yield (image_id, p, q, weight) for nonzero entries with p <= q."""
    c = a.shape[0]
    for p in range(c):
        for q in range(p, c):
            if a[p, q] != 0.0:
                yield image_id, p, q, float(a[p, q])
