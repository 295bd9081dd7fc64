"""Searchable database of interval feature vectors under angular distance.

Features are either the renormalized concatenation of an interval's begin
and end frame embeddings ("full" mode) or the end frame alone ("end_only").
Approximate queries use a forest of random-projection trees: each node
splits on the hyperplane through the mean of two randomly chosen member
points, queries descend to one leaf per tree, and the union of reached
leaves is re-ranked exactly. With `exact_fallback` (default for small
databases) every query is a full linear scan and returns the true nearest
neighbor. Ties always resolve to the lowest insertion index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Demonstration, Interval, normalize_rows, unit_distances

MODE_FULL = "full"
MODE_END_ONLY = "end_only"
_MODES = (MODE_FULL, MODE_END_ONLY)

INDEX_MAGIC = b"RDIX"
INDEX_VERSION = 1

# Databases below this size answer exactly by default; forests are opt-in.
EXACT_FALLBACK_MAX = 50_000

_SPLIT_RETRIES = 8


class IndexFormatError(ValueError):
    """An index file violates the on-disk contract."""


@dataclass(frozen=True)
class IntervalFeature:
    """Feature vector of one reference or candidate interval."""

    vector: np.ndarray
    duration: int
    source: Interval
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if self.duration < 1:
            raise ValueError(f"duration must be >= 1, got {self.duration}")
        v = np.asarray(self.vector, dtype=np.float32)
        object.__setattr__(self, "vector", v)
        v.flags.writeable = False


def features_for_pairs(demo: Demonstration, pairs, mode: str) -> np.ndarray:
    """Feature vectors for (begin, end) pairs as a (len(pairs) x d) matrix.

    The single-interval and batched scoring paths both route through this
    helper so their float behavior is bit-identical.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    if len(pairs) == 0:
        width = 2 * demo.dim if mode == MODE_FULL else demo.dim
        return np.empty((0, width), dtype=np.float32)
    begins = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    ends = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    if begins.min() < 0 or ends.max() > demo.length or (ends <= begins).any():
        raise ValueError(f"interval out of range for demo {demo.id!r} of length {demo.length}")
    if mode == MODE_FULL:
        rows = np.concatenate([demo.frames[begins], demo.frames[ends - 1]], axis=1)
    else:
        rows = demo.frames[ends - 1]
    return normalize_rows(rows)


def feature_of(demo: Demonstration, interval: Interval, mode: str) -> IntervalFeature:
    """Feature of one interval; the end frame is index `end - 1`."""
    row = features_for_pairs(demo, [(interval.begin, interval.end)], mode)[0]
    return IntervalFeature(vector=row, duration=interval.duration, source=interval, mode=mode)


@dataclass(frozen=True)
class _Tree:
    """One random-projection tree over the full entry set, stored flat.

    Internal nodes carry a hyperplane (normal, offset) and two children;
    leaves reference a slice of `items`. Leaves of one tree partition the
    entry set.
    """

    normals: np.ndarray  # (n_nodes, d) float64, zero rows for leaves
    offsets: np.ndarray  # (n_nodes,) float64
    children: np.ndarray  # (n_nodes, 2) int32, (-1, -1) for leaves
    leaf_slices: np.ndarray  # (n_nodes, 2) int32 (start, count), (-1, -1) internal
    items: np.ndarray  # (n_entries,) int32

    def leaf_for(self, q64: np.ndarray) -> np.ndarray:
        nid = 0
        while self.children[nid, 0] >= 0:
            margin = float(self.normals[nid] @ q64) - float(self.offsets[nid])
            nid = int(self.children[nid, 0]) if margin < 0 else int(self.children[nid, 1])
        start, count = self.leaf_slices[nid]
        return self.items[start : start + count]


def _pick_split(vectors64: np.ndarray, items: np.ndarray, rng: np.random.Generator):
    """Hyperplane through the mean of two random member points, or None."""

    def plane(pi: int, qi: int):
        p, q = vectors64[items[pi]], vectors64[items[qi]]
        w = p - q
        if np.linalg.norm(w) < 1e-12:
            return None
        c = float(w @ ((p + q) / 2.0))
        margins = vectors64[items] @ w - c
        left = items[margins < 0]
        right = items[margins >= 0]
        if left.size and right.size:
            return w, c, left, right
        return None

    for _ in range(_SPLIT_RETRIES):
        pi, qi = rng.choice(items.size, size=2, replace=False)
        result = plane(int(pi), int(qi))
        if result is not None:
            return result
    # Random pairs kept colliding; fall back to the first distinct pair.
    base = vectors64[items[0]]
    for qi in range(1, items.size):
        if not np.array_equal(vectors64[items[qi]], base):
            return plane(0, qi)
    return None  # all points identical: unsplittable


def _build_tree(vectors64: np.ndarray, leaf_max: int, rng: np.random.Generator) -> _Tree:
    dim = vectors64.shape[1]
    normals: list[np.ndarray] = []
    offsets: list[float] = []
    children: list[list[int]] = []
    leaf_slices: list[list[int]] = []
    items_flat: list[np.ndarray] = []
    items_count = 0

    def new_node() -> int:
        normals.append(np.zeros(dim))
        offsets.append(0.0)
        children.append([-1, -1])
        leaf_slices.append([-1, -1])
        return len(offsets) - 1

    stack = [(np.arange(vectors64.shape[0], dtype=np.int32), new_node())]
    while stack:
        items, nid = stack.pop()
        split = _pick_split(vectors64, items, rng) if items.size > leaf_max else None
        if split is None:
            leaf_slices[nid] = [items_count, int(items.size)]
            items_flat.append(items)
            items_count += int(items.size)
        else:
            w, c, left, right = split
            normals[nid] = w
            offsets[nid] = c
            lid = new_node()
            rid = new_node()
            children[nid] = [lid, rid]
            stack.append((left, lid))
            stack.append((right, rid))

    return _Tree(
        normals=np.asarray(normals),
        offsets=np.asarray(offsets),
        children=np.asarray(children, dtype=np.int32),
        leaf_slices=np.asarray(leaf_slices, dtype=np.int32),
        items=np.concatenate(items_flat).astype(np.int32),
    )


@dataclass(frozen=True)
class IntervalIndex:
    """Immutable searchable set of interval features (one mode per index)."""

    mode: str
    vectors: np.ndarray  # (n, d) float32 unit rows
    durations: np.ndarray  # (n,) int64
    sources: tuple[Interval, ...]
    trees: tuple[_Tree, ...]
    leaf_max: int
    seed: int
    exact_fallback: bool

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def entry(self, i: int) -> IntervalFeature:
        return IntervalFeature(
            vector=self.vectors[i],
            duration=int(self.durations[i]),
            source=self.sources[i],
            mode=self.mode,
        )


def build_index(
    features,
    trees: int = 10,
    leaf_max: int = 32,
    seed: int = 0,
    exact_fallback: bool | None = None,
) -> IntervalIndex:
    """Build an index over IntervalFeatures; deterministic given `seed`.

    `exact_fallback=None` enables exact queries when the database has
    fewer than EXACT_FALLBACK_MAX entries. Rejects empty or mixed-mode
    input; `trees` may be 0 only when exact queries are enabled.
    """
    features = list(features)
    if not features:
        raise ValueError("cannot build an index over zero features")
    mode = features[0].mode
    dims = {f.vector.shape[0] for f in features}
    if len(dims) != 1:
        raise ValueError(f"features disagree on dim: {sorted(dims)}")
    modes = {f.mode for f in features}
    if modes != {mode}:
        raise ValueError(f"mixed feature modes in one index: {sorted(modes)}")
    if trees < 0 or leaf_max < 1:
        raise ValueError("trees must be >= 0 and leaf_max >= 1")
    if exact_fallback is None:
        exact_fallback = len(features) < EXACT_FALLBACK_MAX
    if trees == 0 and not exact_fallback:
        raise ValueError("an index needs trees or the exact fallback")

    vectors = np.stack([f.vector for f in features]).astype(np.float32)
    vectors64 = vectors.astype(np.float64)
    forest = tuple(
        _build_tree(vectors64, leaf_max, np.random.default_rng([seed, t]))
        for t in range(trees)
    )
    return IntervalIndex(
        mode=mode,
        vectors=vectors,
        durations=np.asarray([f.duration for f in features], dtype=np.int64),
        sources=tuple(f.source for f in features),
        trees=forest,
        leaf_max=leaf_max,
        seed=seed,
        exact_fallback=exact_fallback,
    )


def _query_id(index: IntervalIndex, q: np.ndarray) -> tuple[int, float]:
    q64 = q.astype(np.float64)
    if index.exact_fallback or not index.trees:
        dists = unit_distances(index.vectors, q)
        best = int(np.argmin(dists))  # first min == lowest insertion index
        return best, float(dists[best])
    leaves = [tree.leaf_for(q64) for tree in index.trees]
    candidates = np.unique(np.concatenate(leaves))  # sorted, so argmin tie -> lowest
    dists = unit_distances(index.vectors[candidates], q)
    k = int(np.argmin(dists))
    return int(candidates[k]), float(dists[k])


def query(index: IntervalIndex, probe) -> tuple[IntervalFeature, float]:
    """Nearest stored entry to `probe` (IntervalFeature or vector)."""
    q = probe.vector if isinstance(probe, IntervalFeature) else np.asarray(probe, dtype=np.float32)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise ValueError(f"probe dim {q.shape} does not match index dim {index.dim}")
    if isinstance(probe, IntervalFeature) and probe.mode != index.mode:
        raise ValueError(f"probe mode {probe.mode!r} does not match index mode {index.mode!r}")
    best, dist = _query_id(index, q)
    return index.entry(best), dist


def query_ids(index: IntervalIndex, probes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched query: entry ids and distances for each probe row."""
    if probes.ndim != 2 or probes.shape[1] != index.dim:
        raise ValueError(f"probe matrix {probes.shape} does not match index dim {index.dim}")
    ids = np.empty(probes.shape[0], dtype=np.int64)
    dists = np.empty(probes.shape[0])
    for r in range(probes.shape[0]):
        ids[r], dists[r] = _query_id(index, probes[r])
    return ids, dists


def _pack_tree(tree: _Tree) -> bytes:
    parts = [struct.pack("<II", tree.offsets.shape[0], tree.items.shape[0])]
    parts.append(np.ascontiguousarray(tree.normals, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(tree.offsets, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(tree.children, dtype="<i4").tobytes())
    parts.append(np.ascontiguousarray(tree.leaf_slices, dtype="<i4").tobytes())
    parts.append(np.ascontiguousarray(tree.items, dtype="<i4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.raw):
            raise IndexFormatError(f"{self.path}: truncated index file")
        out = self.raw[self.pos : self.pos + count]
        self.pos += count
        return out

    def array(self, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(n * width), dtype=dtype).reshape(shape).copy()


def save_index(index: IntervalIndex, path) -> None:
    """Serialize an index; load_index answers every query identically."""
    if len(index) == 0:
        raise ValueError("refusing to save an empty index")
    out = Path(path)
    mode_code = 0 if index.mode == MODE_FULL else 1
    parts = [
        struct.pack(
            "<4sIBBHIIIIq",
            INDEX_MAGIC,
            INDEX_VERSION,
            mode_code,
            1 if index.exact_fallback else 0,
            0,
            len(index),
            index.dim,
            len(index.trees),
            index.leaf_max,
            index.seed,
        )
    ]
    parts.append(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(index.durations, dtype="<i8").tobytes())
    for iv in index.sources:
        demo_id = iv.demo_id.encode("utf-8")
        parts.append(struct.pack("<I", len(demo_id)) + demo_id)
        parts.append(struct.pack("<qq", iv.begin, iv.end))
    for tree in index.trees:
        parts.append(_pack_tree(tree))
    out.write_bytes(b"".join(parts))


def load_index(path) -> IntervalIndex:
    """Load an index written by save_index, validating magic and version."""
    p = Path(path)
    reader = _Reader(p.read_bytes(), p)
    header = reader.take(struct.calcsize("<4sIBBHIIIIq"))
    magic, version, mode_code, exact, _pad, n, dim, n_trees, leaf_max, seed = struct.unpack(
        "<4sIBBHIIIIq", header
    )
    if magic != INDEX_MAGIC:
        raise IndexFormatError(f"{p}: bad magic {magic!r}, expected {INDEX_MAGIC!r}")
    if version != INDEX_VERSION:
        raise IndexFormatError(f"{p}: unsupported index version {version}")
    vectors = reader.array("<f4", (n, dim)).astype(np.float32)
    durations = reader.array("<i8", (n,)).astype(np.int64)
    sources = []
    for _ in range(n):
        (id_len,) = struct.unpack("<I", reader.take(4))
        demo_id = reader.take(id_len).decode("utf-8")
        begin, end = struct.unpack("<qq", reader.take(16))
        sources.append(Interval(demo_id, begin, end))
    trees = []
    for _ in range(n_trees):
        n_nodes, n_items = struct.unpack("<II", reader.take(8))
        trees.append(
            _Tree(
                normals=reader.array("<f8", (n_nodes, dim)),
                offsets=reader.array("<f8", (n_nodes,)),
                children=reader.array("<i4", (n_nodes, 2)),
                leaf_slices=reader.array("<i4", (n_nodes, 2)),
                items=reader.array("<i4", (n_items,)),
            )
        )
    if reader.pos != len(reader.raw):
        raise IndexFormatError(f"{p}: {len(reader.raw) - reader.pos} trailing bytes")
    return IntervalIndex(
        mode=MODE_FULL if mode_code == 0 else MODE_END_ONLY,
        vectors=vectors,
        durations=durations,
        sources=tuple(sources),
        trees=tuple(trees),
        leaf_max=leaf_max,
        seed=seed,
        exact_fallback=bool(exact),
    )
