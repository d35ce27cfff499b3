"""Skeleton sequences to trajectory graphs.

A sequence is normalized once by the similarity transform estimated on its first
frame, cut into M contiguous chunks, and every joint becomes a node whose signal
is the concatenation of its per-chunk mean coordinates. Text formats:

* sequence file: ``T n`` then T lines of 3n decimals (x y z per joint)
* manifest: one ``relative_path label split`` line per sequence
* edge list: ``i j`` lines, 0-based
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Literal, Optional

import numpy as np
from exports import export
from pydantic import validator

from cheblap.matrix_io import format_row, parse_floats, read_lines
from cheblap.model import worker_count
from cheblap.utils.dynamic_default import dynamic_default
from cheblap.utils.errors import (
    DegenerateReference,
    IndexOutOfRange,
    MissingFile,
    ParseError,
    ShapeMismatch,
    TooShort,
)
from cheblap.utils.frozen import FrozenArrayModel

logger = logging.getLogger(__name__)

# smallest reference-triangle area accepted on frame 0
MIN_REFERENCE_AREA = 1e-9
# |p2 - p3| after normalization
REFERENCE_SPAN = 1.0

Split = Literal["train", "test"]
Edge = tuple[int, int]

# Kinect skeleton: head, neck, torso, left shoulder/elbow/hand,
# right shoulder/elbow/hand, left hip/knee/foot, right hip/knee/foot
SBU_JOINTS = 15
# fmt: off
SBU_EDGES: tuple[Edge, ...] = (
    (0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8),
    (2, 9), (9, 10), (10, 11), (2, 12), (12, 13), (13, 14),
)
# fmt: on
SBU_REFERENCE_JOINTS = (1, 3, 6)

# wrist, five MCPs, then PIP/DIP/TIP per finger from thumb to pinky
FPHA_JOINTS = 21
FPHA_EDGES: tuple[Edge, ...] = tuple(
    [(0, 1 + f) for f in range(5)]
    + [(1 + f, 6 + 3 * f) for f in range(5)]
    + [(6 + 3 * f + c, 7 + 3 * f + c) for f in range(5) for c in range(2)]
)
FPHA_REFERENCE_JOINTS = (0, 2, 4)


@export
def two_person_edges(edges: Iterable[Edge], joints: int) -> tuple[Edge, ...]:
    """Two copies of a skeleton on 2 * joints nodes, with no edges between them."""
    edges = tuple(edges)
    return edges + tuple((i + joints, j + joints) for i, j in edges)


SBU_PAIR_EDGES = two_person_edges(SBU_EDGES, SBU_JOINTS)


@export
class SkeletonSequence(FrozenArrayModel):
    # (T, n, 3), meters
    frames: np.ndarray
    reference_joints: tuple[int, int, int] = SBU_REFERENCE_JOINTS
    label: int = 0

    @validator("frames")
    def _shape(cls, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 3 or frames.shape[2] != 3 or frames.shape[0] < 1:
            raise ShapeMismatch(f"expected (T, n, 3) frames, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames hold NaN or Inf coordinates")
        return frames

    @validator("reference_joints")
    def _in_range(cls, joints: tuple[int, int, int], values) -> tuple[int, int, int]:
        if "frames" in values:
            n = values["frames"].shape[1]
            bad = [j for j in joints if not 0 <= j < n]
            if bad:
                raise IndexOutOfRange(f"reference joints {bad} outside [0, {n})")
        return joints

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> int:
        return self.frames.shape[1]


@export
class TrajectoryGraph(FrozenArrayModel):
    # (3M, n): rows are chunk-major (x, y, z) means, columns are joints
    signal: np.ndarray
    adjacency: np.ndarray
    label: int
    split: Split = "train"


def reference_frame(frame: np.ndarray, reference_joints: tuple[int, int, int]):
    """(origin, rotation, scale) with p_hat = scale * (p - origin) @ rotation."""
    p1, p2, p3 = (frame[j] for j in reference_joints)
    normal = np.cross(p2 - p1, p3 - p1)
    area = 0.5 * np.linalg.norm(normal)
    if area < MIN_REFERENCE_AREA:
        raise DegenerateReference(
            f"reference joints {reference_joints} span area {area:.3e} on frame 0"
        )
    span = p2 - p3
    x_axis = span / np.linalg.norm(span)
    z_axis = normal / np.linalg.norm(normal)
    y_axis = np.cross(z_axis, x_axis)
    rotation = np.stack([x_axis, y_axis, z_axis], axis=1)
    return (p2 + p3) / 2.0, rotation, REFERENCE_SPAN / np.linalg.norm(span)


@export
def normalize_sequence(seq: SkeletonSequence) -> SkeletonSequence:
    origin, rotation, scale = reference_frame(seq.frames[0], seq.reference_joints)
    frames = scale * (seq.frames - origin) @ rotation
    return SkeletonSequence(
        frames=frames, reference_joints=seq.reference_joints, label=seq.label
    )


@export
def temporal_chunk(seq: SkeletonSequence, M: int) -> np.ndarray:
    """(3M, n) node signals from M contiguous chunk means."""
    T = seq.length
    if M < 1:
        raise ValueError(f"chunk count must be positive, got {M}")
    if T < M:
        raise TooShort(f"{T} frames cannot fill {M} chunks")
    bounds = [(c * T) // M for c in range(M + 1)]
    means = [seq.frames[bounds[c] : bounds[c + 1]].mean(axis=0) for c in range(M)]
    # (M, n, 3) -> (M, 3, n) -> (3M, n)
    return np.stack(means).transpose(0, 2, 1).reshape(3 * M, seq.joints)


@export
def edges_to_adjacency(edges: Iterable[Edge], n: int) -> np.ndarray:
    A = np.zeros((n, n))
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"edge ({i}, {j}) outside [0, {n})")
        A[i, j] = A[j, i] = 1.0
    return A


@export
def build_graph(
    seq: SkeletonSequence, skeleton_edges: Iterable[Edge], M: int, split: Split = "train"
) -> TrajectoryGraph:
    return TrajectoryGraph(
        signal=temporal_chunk(seq, M),
        adjacency=edges_to_adjacency(skeleton_edges, seq.joints),
        label=seq.label,
        split=split,
    )


@export
def write_sequence(path: str | Path, seq: SkeletonSequence) -> None:
    T, n = seq.length, seq.joints
    lines = [f"{T} {n}"] + [format_row(frame.ravel()) for frame in seq.frames]
    Path(path).write_text("\n".join(lines) + "\n")


@export
def read_sequence(
    path: str | Path,
    reference_joints: tuple[int, int, int] = SBU_REFERENCE_JOINTS,
    label: int = 0,
) -> SkeletonSequence:
    path_str = str(path)
    lines = [(i + 1, line) for i, line in enumerate(read_lines(path)) if line.strip()]
    if not lines:
        raise ParseError("empty sequence file", path_str)
    line_no, header = lines[0]
    try:
        T, n = (int(token) for token in header.split())
    except ValueError:
        raise ParseError(f"expected 'T n', got {header!r}", path_str, line_no) from None
    if len(lines) - 1 != T:
        raise ParseError(f"expected {T} frames, found {len(lines) - 1}", path_str, line_no)

    frames = np.empty((T, n, 3))
    for t, (line_no, text) in enumerate(lines[1:]):
        values = parse_floats(text, path_str, line_no)
        if len(values) != 3 * n:
            raise ParseError(f"expected {3 * n} values, found {len(values)}", path_str, line_no)
        frames[t] = np.reshape(values, (n, 3))
    return SkeletonSequence(frames=frames, reference_joints=reference_joints, label=label)


@export
def write_edges(path: str | Path, edges: Iterable[Edge]) -> None:
    Path(path).write_text("".join(f"{i} {j}\n" for i, j in edges))


@export
def read_edges(path: str | Path) -> list[Edge]:
    edges = []
    for line_no, line in enumerate(read_lines(path), start=1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            i, j = (int(token) for token in tokens)
        except ValueError:
            raise ParseError(f"expected 'i j', got {line.strip()!r}", str(path), line_no) from None
        edges.append((i, j))
    return edges


@export
def write_manifest(path: str | Path, entries: Iterable[tuple[str, int, Split]]) -> None:
    Path(path).write_text("".join(f"{rel} {label} {split}\n" for rel, label, split in entries))


@export
def read_manifest(path: str | Path) -> list[tuple[str, int, Split]]:
    entries = []
    for line_no, line in enumerate(read_lines(path), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 3:
            raise ParseError(f"expected 'path label split', got {line.strip()!r}", str(path), line_no)
        rel, label, split = tokens
        try:
            label = int(label)
        except ValueError:
            raise ParseError(f"label {label!r} is not an integer", str(path), line_no) from None
        if split not in ("train", "test"):
            raise ParseError(f"split must be train or test, got {split!r}", str(path), line_no)
        entries.append((rel, label, split))
    return entries


@export
@dynamic_default("workers", worker_count)
def load_dataset(
    manifest_path: str | Path,
    *,
    reference_joints: tuple[int, int, int] = SBU_REFERENCE_JOINTS,
    chunks: int = 4,
    edges: Optional[Iterable[Edge]] = None,
    workers: Optional[int] = None,
) -> list[TrajectoryGraph]:
    """Graphs in manifest order; edges default to ``edges.txt`` beside the manifest."""
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    root = manifest_path.parent
    if edges is None:
        edges_path = root / "edges.txt"
        if not edges_path.is_file():
            raise MissingFile(f"{edges_path} does not exist and no edges were given")
        edges = read_edges(edges_path)
    edges = list(edges)

    def load(entry: tuple[str, int, Split]) -> TrajectoryGraph:
        rel, label, split = entry
        seq = read_sequence(root / rel, reference_joints, label)
        return build_graph(normalize_sequence(seq), edges, chunks, split)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        graphs = list(pool.map(load, entries))
    logger.info(
        "loaded %d sequences (%d train, %d test) from %s",
        len(graphs),
        sum(g.split == "train" for g in graphs),
        sum(g.split == "test" for g in graphs),
        manifest_path,
    )
    return graphs


@export
def split_graphs(graphs: Iterable[TrajectoryGraph], split: Split) -> list[TrajectoryGraph]:
    return [g for g in graphs if g.split == split]


@export
def stack_graphs(graphs: list[TrajectoryGraph]) -> tuple[np.ndarray, np.ndarray]:
    """(B, s, n) signals and (B,) labels."""
    if not graphs:
        return np.empty((0, 0, 0)), np.empty(0, dtype=int)
    return (
        np.stack([g.signal for g in graphs]),
        np.array([g.label for g in graphs], dtype=int),
    )
