"""Synthetic skeleton actions whose class lives on a hidden joint-interaction graph.

Hidden pairs of joints that are not bones share a motion direction. In every
sequence each pair oscillates with a random phase and the class decides whether
the partner moves in phase or in anti-phase; every other free joint oscillates
with its own random phase. The per-joint chunk features are identically
distributed across classes, so the class is only visible through pairwise
products along the hidden edges: a linear probe stays near chance, the
handcrafted skeleton never links the partners, and a learned adjacency can.
"""
from __future__ import annotations

import logging
import math
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
from exports import export
from pydantic import BaseModel, root_validator, validator
from scipy.spatial.transform import Rotation
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import balanced_accuracy_score

from cheblap.skeleton import (
    SBU_EDGES,
    SBU_JOINTS,
    SBU_REFERENCE_JOINTS,
    Edge,
    SkeletonSequence,
    TrajectoryGraph,
    build_graph,
    normalize_sequence,
    split_graphs,
    stack_graphs,
    write_edges,
    write_manifest,
    write_sequence,
)
from cheblap.utils.errors import EmptySplit

logger = logging.getLogger(__name__)

# meters, x right, y up, z forward
SBU_REST_POSE = np.array(
    [
        [0.00, 1.70, 0.00],
        [0.00, 1.50, 0.00],
        [0.00, 1.20, 0.00],
        [-0.20, 1.45, 0.00],
        [-0.45, 1.25, 0.00],
        [-0.55, 1.00, 0.10],
        [0.20, 1.45, 0.00],
        [0.45, 1.25, 0.00],
        [0.55, 1.00, 0.10],
        [-0.12, 0.95, 0.00],
        [-0.15, 0.50, 0.02],
        [-0.15, 0.05, 0.05],
        [0.12, 0.95, 0.00],
        [0.15, 0.50, 0.02],
        [0.15, 0.05, 0.05],
    ]
)


@export
class SynthSpec(BaseModel):
    num_classes: int = 2
    # train + test sequences of each class
    sequences_per_class: int = 150
    test_per_class: int = 50
    joints: int = SBU_JOINTS
    frames: int = 40
    seed: int = 0
    hidden_pairs: int = 4
    amplitude: float = 0.2
    noise: float = 0.005

    @validator("num_classes", "sequences_per_class", "joints", "frames", "hidden_pairs")
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be positive")
        return value

    @root_validator(skip_on_failure=True)
    def _consistent(cls, values):
        if not 0 <= values["test_per_class"] <= values["sequences_per_class"]:
            raise ValueError("test_per_class must lie in [0, sequences_per_class]")
        if values["joints"] < 3:
            raise ValueError("need at least the three reference joints")
        classes = values["num_classes"]
        if classes > 2 and values["hidden_pairs"] < math.ceil(math.log2(classes)):
            raise ValueError(
                f"{values['hidden_pairs']} hidden pairs cannot separate {classes} classes"
            )
        return values

    @property
    def reference_joints(self) -> tuple[int, int, int]:
        return SBU_REFERENCE_JOINTS if self.joints == SBU_JOINTS else (0, 1, 2)


@export
class SyntheticDataset(BaseModel):
    spec: SynthSpec
    sequences: list[SkeletonSequence]
    splits: list[str]
    skeleton_edges: list[Edge]
    hidden_edges: list[Edge]

    def graphs(self, chunks: int = 4) -> list[TrajectoryGraph]:
        return [
            build_graph(normalize_sequence(seq), self.skeleton_edges, chunks, split)
            for seq, split in zip(self.sequences, self.splits)
        ]


def _skeleton(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, list[Edge]]:
    if spec.joints == SBU_JOINTS:
        return SBU_REST_POSE, list(SBU_EDGES)
    # a random chain for other joint counts
    rest = rng.normal(scale=0.3, size=(spec.joints, 3))
    return rest, [(j, j + 1) for j in range(spec.joints - 1)]


def _hidden_pairs(
    spec: SynthSpec, skeleton_edges: list[Edge], rng: np.random.Generator
) -> list[Edge]:
    bones = {frozenset(e) for e in skeleton_edges}
    free = [j for j in range(spec.joints) if j not in spec.reference_joints]
    candidates = [p for p in combinations(free, 2) if frozenset(p) not in bones]
    used: set[int] = set()
    pairs = []
    for index in rng.permutation(len(candidates)):
        i, j = candidates[index]
        if i in used or j in used:
            continue
        pairs.append((i, j))
        used.update((i, j))
        if len(pairs) == spec.hidden_pairs:
            return sorted(pairs)
    raise ValueError(
        f"cannot place {spec.hidden_pairs} disjoint non-bone pairs on {spec.joints} joints"
    )


def _codebook(spec: SynthSpec) -> np.ndarray:
    """(classes, pairs) 0/1: whether the partner runs in anti-phase."""
    if spec.num_classes == 2:
        return np.array([[0] * spec.hidden_pairs, [1] * spec.hidden_pairs])
    width = max(1, math.ceil(math.log2(spec.num_classes)))
    return np.array(
        [[(c >> (e % width)) & 1 for e in range(spec.hidden_pairs)] for c in range(spec.num_classes)]
    )


def _unit(rng: np.random.Generator, size: int) -> np.ndarray:
    v = rng.normal(size=(size, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@export
def synth_generate(spec: Optional[SynthSpec] = None) -> SyntheticDataset:
    spec = spec if spec is not None else SynthSpec()
    rng = np.random.default_rng(spec.seed)
    rest, skeleton_edges = _skeleton(spec, rng)
    pairs = _hidden_pairs(spec, skeleton_edges, rng)
    codebook = _codebook(spec)
    paired = {j for pair in pairs for j in pair}
    distractors = [
        j for j in range(spec.joints) if j not in paired and j not in spec.reference_joints
    ]
    pair_dirs = _unit(rng, len(pairs))
    distractor_dirs = _unit(rng, len(distractors))
    clock = 2.0 * np.pi * np.arange(spec.frames) / spec.frames

    sequences, splits = [], []
    for label in range(spec.num_classes):
        for index in range(spec.sequences_per_class):
            motion = np.zeros((spec.frames, spec.joints, 3))
            for e, (i, j) in enumerate(pairs):
                phase = rng.uniform(0.0, 2.0 * np.pi)
                offset = np.pi * codebook[label, e]
                motion[:, i] = np.outer(np.sin(clock + phase), pair_dirs[e])
                motion[:, j] = np.outer(np.sin(clock + phase + offset), pair_dirs[e])
            for d, j in enumerate(distractors):
                phase = rng.uniform(0.0, 2.0 * np.pi)
                motion[:, j] = np.outer(np.sin(clock + phase), distractor_dirs[d])
            frames = rest[None] + spec.amplitude * motion
            frames = frames + rng.normal(scale=spec.noise, size=frames.shape)

            # arbitrary camera placement, removed again by normalization
            rotation = Rotation.random(random_state=rng).as_matrix()
            scale = rng.uniform(0.8, 1.25)
            shift = rng.uniform(-1.0, 1.0, size=3)
            frames = scale * frames @ rotation.T + shift

            sequences.append(
                SkeletonSequence(
                    frames=frames, reference_joints=spec.reference_joints, label=label
                )
            )
            is_test = index >= spec.sequences_per_class - spec.test_per_class
            splits.append("test" if is_test else "train")

    logger.debug("hidden interaction pairs: %s", pairs)
    return SyntheticDataset(
        spec=spec,
        sequences=sequences,
        splits=splits,
        skeleton_edges=skeleton_edges,
        hidden_edges=pairs,
    )


@export
def write_dataset(dataset: SyntheticDataset, out_dir: str | Path) -> Path:
    """Sequence files, manifest, skeleton and hidden edge lists; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "sequences").mkdir(parents=True, exist_ok=True)
    entries = []
    for index, (seq, split) in enumerate(zip(dataset.sequences, dataset.splits)):
        rel = f"sequences/seq_{index:05d}.txt"
        write_sequence(out_dir / rel, seq)
        entries.append((rel, seq.label, split))
    manifest = out_dir / "manifest.txt"
    write_manifest(manifest, entries)
    write_edges(out_dir / "edges.txt", dataset.skeleton_edges)
    write_edges(out_dir / "hidden_edges.txt", dataset.hidden_edges)
    logger.info("wrote %d sequences to %s", len(entries), out_dir)
    return manifest


@export
def linear_probe_accuracy(graphs: list[TrajectoryGraph], seed: int = 0) -> float:
    """Class-averaged test accuracy of logistic regression on the raw chunk features."""
    train, test = split_graphs(graphs, "train"), split_graphs(graphs, "test")
    if not train or not test:
        raise EmptySplit("the linear probe needs both a train and a test split")
    X_train, y_train = stack_graphs(train)
    X_test, y_test = stack_graphs(test)
    probe = LogisticRegression(max_iter=5000, random_state=seed)
    probe.fit(X_train.reshape(len(train), -1), y_train)
    return float(balanced_accuracy_score(y_test, probe.predict(X_test.reshape(len(test), -1))))
