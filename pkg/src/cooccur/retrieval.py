"""Descriptor archive with exhaustive chi-square nearest-neighbour search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, TextIO, Union

import numpy as np

DESC_MAGIC = "DESC v1"
CHI2_EPS = 1e-12


class StoreError(ValueError):
    pass


def chi_square(u, v, eps: float = CHI2_EPS) -> float:
    """0.5 * sum((u - v)**2 / (u + v + eps)) for non-negative vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    if np.any(u < 0) or np.any(v < 0):
        raise ValueError("chi-square distance needs non-negative vectors")
    return float(_chi2_rows(u[None], v)[0])


def _chi2_rows(mat: np.ndarray, v: np.ndarray, eps: float = CHI2_EPS) -> np.ndarray:
    d = mat - v
    return 0.5 * np.sum(d * d / (mat + v + eps), axis=1)


@dataclass(frozen=True)
class Hit:
    image_id: str
    distance: float


class DescriptorStore:
    """Map of image id -> (non-negative descriptor, label bits)."""

    def __init__(self, gamma: int, num_classes: int):
        if gamma < 1 or num_classes < 1:
            raise StoreError("gamma and num_classes must be >= 1")
        self.gamma = gamma
        self.num_classes = num_classes
        self._entries: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._index = None

    def add(self, image_id: str, descriptor, labels) -> None:
        image_id = str(image_id)
        if not image_id or any(ch.isspace() for ch in image_id):
            raise StoreError(f"invalid image id {image_id!r}")
        if image_id in self._entries:
            raise StoreError(f"duplicate image id {image_id!r}")
        d = np.asarray(descriptor, dtype=np.float64).reshape(-1)
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if d.size != self.gamma:
            raise StoreError(f"{image_id}: descriptor length {d.size} != gamma {self.gamma}")
        if y.size != self.num_classes:
            raise StoreError(f"{image_id}: {y.size} label bits, expected {self.num_classes}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise StoreError(f"{image_id}: descriptor must be finite and non-negative")
        if np.any((y != 0) & (y != 1)):
            raise StoreError(f"{image_id}: label bits must be 0/1")
        self._entries[image_id] = (d.copy(), y.copy())
        self._index = None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, image_id) -> bool:
        return image_id in self._entries

    def ids(self) -> list[str]:
        return list(self._entries)

    def descriptor(self, image_id: str) -> np.ndarray:
        return self._get(image_id)[0]

    def labels(self, image_id: str) -> np.ndarray:
        return self._get(image_id)[1]

    def _get(self, image_id):
        try:
            return self._entries[image_id]
        except KeyError:
            raise StoreError(f"unknown image id {image_id!r}") from None

    def _arrays(self):
        # id-sorted arrays make ranking independent of insertion order
        if self._index is None:
            ids = sorted(self._entries)
            mat = np.array([self._entries[i][0] for i in ids]).reshape(len(ids), self.gamma)
            lab = np.array([self._entries[i][1] for i in ids]).reshape(len(ids), self.num_classes)
            self._index = (ids, mat, lab)
        return self._index

    def __eq__(self, other):
        if not isinstance(other, DescriptorStore):
            return NotImplemented
        if (self.gamma, self.num_classes, self.ids()) != (
            other.gamma,
            other.num_classes,
            other.ids(),
        ):
            return False
        return all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(self._entries.values(), other._entries.values())
        )


def query(
    store: DescriptorStore, q: Union[str, np.ndarray], k: int, exclude: Iterable[str] = ()
) -> list[Hit]:
    """The k nearest store entries, ascending distance, ties by ascending id.

    Querying by id excludes that id from the ranking.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    excluded = set(exclude)
    if isinstance(q, str):
        vec = store.descriptor(q)
        excluded.add(q)
    else:
        vec = np.asarray(q, dtype=np.float64).reshape(-1)
        if vec.size != store.gamma:
            raise ValueError(f"query length {vec.size} != gamma {store.gamma}")
        if np.any(vec < 0):
            raise ValueError("chi-square distance needs non-negative vectors")
    ids, mat, _ = store._arrays()
    dist = _chi2_rows(mat, vec)
    order = np.argsort(dist, kind="stable")
    hits = []
    for i in order:
        if ids[i] in excluded:
            continue
        hits.append(Hit(ids[i], float(dist[i])))
        if len(hits) == k:
            break
    return hits


# ---------------------------------------------------------------------------
# DESC v1: "DESC v1" / "count gamma C" / per line: id, C label bits, gamma floats


def dump_store(store: DescriptorStore, sink: TextIO) -> None:
    sink.write(f"{DESC_MAGIC}\n{len(store)} {store.gamma} {store.num_classes}\n")
    for image_id, (d, y) in store._entries.items():
        bits = " ".join(str(int(b)) for b in y)
        vals = " ".join(repr(float(x)) for x in d)
        sink.write(f"{image_id} {bits} {vals}\n")


def load_store(source: TextIO, name: str = "<stream>") -> DescriptorStore:
    lines = source.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != DESC_MAGIC:
        raise StoreError(f"{name}:1: malformed header, expected '{DESC_MAGIC}'")
    try:
        count, gamma, c = (int(t) for t in lines[1].split())
    except (IndexError, ValueError):
        raise StoreError(f"{name}:2: malformed header, expected 'count gamma C'") from None
    body = lines[2:]
    if len(body) != count:
        raise StoreError(f"{name}: header says {count} entries, found {len(body)}")
    store = DescriptorStore(gamma, c)
    for i, line in enumerate(body):
        toks = line.split()
        if len(toks) != 1 + c + gamma:
            raise StoreError(
                f"{name}:{i + 3}: expected {1 + c + gamma} fields, found {len(toks)}"
            )
        try:
            bits = [int(t) for t in toks[1 : 1 + c]]
            vals = [float(t) for t in toks[1 + c :]]
            store.add(toks[0], vals, bits)
        except ValueError as e:
            raise StoreError(f"{name}:{i + 3}: {e}") from None
    return store


def save_store(store: DescriptorStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_store(store, fh)


def read_store(path) -> DescriptorStore:
    with open(path, encoding="utf-8") as fh:
        return load_store(fh, name=str(path))
