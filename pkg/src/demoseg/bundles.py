"""On-disk demonstration bundles: manifest plus binary embedding matrices.

A bundle is a directory with a `manifest.json` (format_version 1) listing
one entry per stored matrix. Matrix files are little-endian binary with a
16-byte header: magic "RDDM", u32 frame_count, u32 dim, u32 reserved, then
frame_count x dim float32 values, row-major. Round-trips are bit-exact.

Entries sharing one `id` are camera views of the same demonstration: their
per-frame embeddings are normalized per view, concatenated in manifest
order, and the concatenated frame is renormalized.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Demonstration, Interval, normalize_rows

MATRIX_MAGIC = b"RDDM"
MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """A bundle violates the manifest or matrix-file contract."""


@dataclass(frozen=True)
class DemoEntry:
    id: str
    matrix_file: str
    frame_count: int
    dim: int
    boundaries: tuple[int, ...] | None = None
    camera_group: str | None = None

    def __post_init__(self) -> None:
        if self.frame_count < 2:
            raise BundleError(f"entry {self.id!r}: frame_count must be >= 2, got {self.frame_count}")
        if self.dim < 1:
            raise BundleError(f"entry {self.id!r}: dim must be >= 1, got {self.dim}")
        if self.boundaries is not None:
            object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
            prev = 0
            for b in self.boundaries:
                if b <= prev:
                    raise BundleError(
                        f"entry {self.id!r}: boundaries must be strictly increasing "
                        f"and start above 0, got {list(self.boundaries)}"
                    )
                prev = b
            if self.boundaries[-1] != self.frame_count:
                raise BundleError(
                    f"entry {self.id!r}: boundaries must end at frame_count "
                    f"{self.frame_count}, got {self.boundaries[-1]}"
                )


@dataclass(frozen=True)
class Bundle:
    root: Path
    manifest: tuple[DemoEntry, ...]


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    """Write a (frames x dim) float32 matrix in the binary format."""
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise BundleError(f"{path}: matrix must be 2-D")
    header = struct.pack("<4sIII", MATRIX_MAGIC, m.shape[0], m.shape[1], 0)
    path.write_bytes(header + m.tobytes())


def read_matrix(path: Path) -> np.ndarray:
    """Read a matrix file, validating magic, header, and payload size."""
    raw = path.read_bytes()
    if len(raw) < 16:
        raise BundleError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, frame_count, dim, _reserved = struct.unpack("<4sIII", raw[:16])
    if magic != MATRIX_MAGIC:
        raise BundleError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    expected = 16 + frame_count * dim * 4
    if len(raw) != expected:
        raise BundleError(f"{path}: expected {expected} bytes for {frame_count}x{dim}, got {len(raw)}")
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(frame_count, dim)
    return data.astype(np.float32)


def _entry_from_json(obj: dict, idx: int) -> DemoEntry:
    try:
        return DemoEntry(
            id=str(obj["id"]),
            matrix_file=str(obj["matrix_file"]),
            frame_count=int(obj["frame_count"]),
            dim=int(obj["dim"]),
            boundaries=tuple(obj["boundaries"]) if obj.get("boundaries") is not None else None,
            camera_group=obj.get("camera_group"),
        )
    except KeyError as exc:
        raise BundleError(f"manifest entry {idx}: missing field {exc}") from exc


def _entry_to_json(entry: DemoEntry) -> dict:
    obj: dict = {
        "id": entry.id,
        "matrix_file": entry.matrix_file,
        "frame_count": entry.frame_count,
        "dim": entry.dim,
    }
    if entry.boundaries is not None:
        obj["boundaries"] = list(entry.boundaries)
    if entry.camera_group is not None:
        obj["camera_group"] = entry.camera_group
    return obj


def read_bundle(path) -> tuple[Bundle, list[Demonstration]]:
    """Load a bundle directory into normalized Demonstrations.

    Camera views sharing an id are merged (see module docstring). Every
    diagnostic names the offending entry; demos must agree on the final
    embedding dimension.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
    try:
        doc = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{manifest_path}: invalid JSON: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleError(f"{manifest_path}: unsupported format_version {version!r}")
    entries = tuple(_entry_from_json(obj, i) for i, obj in enumerate(doc.get("entries", [])))

    # Group camera views by id, preserving manifest order.
    groups: dict[str, list[DemoEntry]] = {}
    for entry in entries:
        groups.setdefault(entry.id, []).append(entry)

    demos: list[Demonstration] = []
    dim_seen: tuple[str, int] | None = None
    for demo_id, group in groups.items():
        views: list[np.ndarray] = []
        frame_count = group[0].frame_count
        boundaries: tuple[int, ...] | None = None
        cams = [e.camera_group for e in group]
        if len(group) > 1:
            if any(c is None for c in cams) or len(set(cams)) != len(cams):
                raise BundleError(
                    f"demo {demo_id!r}: multiple entries need distinct camera_group labels, got {cams}"
                )
        for entry in group:
            if entry.frame_count != frame_count:
                raise BundleError(
                    f"demo {demo_id!r}: camera views disagree on frame_count "
                    f"({entry.frame_count} vs {frame_count})"
                )
            if entry.boundaries is not None:
                if boundaries is not None and boundaries != entry.boundaries:
                    raise BundleError(f"demo {demo_id!r}: camera views disagree on boundaries")
                boundaries = entry.boundaries
            file_path = root / entry.matrix_file
            if not file_path.is_file():
                raise FileNotFoundError(f"entry {entry.id!r}: missing matrix file {file_path}")
            matrix = read_matrix(file_path)
            if matrix.shape != (entry.frame_count, entry.dim):
                raise BundleError(
                    f"entry {entry.id!r}: {file_path} holds {matrix.shape[0]}x{matrix.shape[1]}, "
                    f"manifest says {entry.frame_count}x{entry.dim}"
                )
            views.append(normalize_rows(matrix))
        frames = views[0] if len(views) == 1 else normalize_rows(np.concatenate(views, axis=1))
        if dim_seen is None:
            dim_seen = (demo_id, frames.shape[1])
        elif frames.shape[1] != dim_seen[1]:
            raise BundleError(
                f"embedding dims disagree across bundle: demo {dim_seen[0]!r} has dim "
                f"{dim_seen[1]}, demo {demo_id!r} has dim {frames.shape[1]}"
            )
        demos.append(Demonstration(id=demo_id, frames=frames, labels=boundaries))

    return Bundle(root=root, manifest=entries), demos


def write_bundle(demos, path) -> Bundle:
    """Write Demonstrations as a bundle directory; returns the Bundle.

    One entry per demo (views, if any, were merged at read time), with
    deterministic matrix filenames, so write -> read -> write is a file-level
    fixed point. An empty demo list produces a valid empty manifest.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries: list[DemoEntry] = []
    seen: set[str] = set()
    for i, demo in enumerate(demos):
        if demo.id in seen:
            raise BundleError(f"duplicate demo id {demo.id!r}")
        seen.add(demo.id)
        filename = f"{i:05d}.mat"
        write_matrix(root / filename, demo.frames)
        entries.append(
            DemoEntry(
                id=demo.id,
                matrix_file=filename,
                frame_count=demo.length,
                dim=demo.dim,
                boundaries=demo.labels,
            )
        )
    doc = {
        "format_version": FORMAT_VERSION,
        "entries": [_entry_to_json(e) for e in entries],
    }
    (root / MANIFEST_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
    return Bundle(root=root, manifest=tuple(entries))


def reference_intervals(demos) -> list[tuple[Interval, int]]:
    """Expert-labeled sub-task intervals from every demo's boundaries.

    One interval per consecutive boundary pair; together they cover each
    demo exactly. Raises if any demo lacks boundaries, listing the ids.
    """
    missing = [d.id for d in demos if d.labels is None]
    if missing:
        raise BundleError(f"demos lack expert boundaries: {missing}")
    out: list[tuple[Interval, int]] = []
    for demo in demos:
        for iv in demo.label_intervals():
            out.append((iv, iv.duration))
    return out
