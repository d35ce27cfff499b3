import numpy as np
import pytest

from cheblap.skeleton import load_dataset
from cheblap.synthetic import (
    SynthSpec,
    linear_probe_accuracy,
    synth_generate,
    write_dataset,
)
from cheblap.utils.errors import EmptySplit

SMALL = SynthSpec(sequences_per_class=100, test_per_class=30, frames=16, seed=3)


def test_same_seed_same_dataset():
    first, second = synth_generate(SMALL), synth_generate(SMALL)
    assert first.hidden_edges == second.hidden_edges
    for a, b in zip(first.sequences, second.sequences):
        np.testing.assert_array_equal(a.frames, b.frames)


def test_different_seed_different_dataset():
    first = synth_generate(SMALL)
    second = synth_generate(SMALL.copy(update={"seed": 4}))
    assert not np.array_equal(first.sequences[0].frames, second.sequences[0].frames)


def test_balanced_classes_and_splits():
    dataset = synth_generate(SMALL)
    labels = [seq.label for seq in dataset.sequences]
    assert len(labels) == 200
    assert labels.count(0) == labels.count(1) == 100
    assert dataset.splits.count("test") == 60
    for label in (0, 1):
        splits = [s for s, l in zip(dataset.splits, labels) if l == label]
        assert splits.count("test") == 30


def test_hidden_pairs_are_not_bones():
    dataset = synth_generate(SMALL)
    bones = {frozenset(e) for e in dataset.skeleton_edges}
    assert len(dataset.hidden_edges) == SMALL.hidden_pairs
    joints = [j for pair in dataset.hidden_edges for j in pair]
    assert len(set(joints)) == len(joints)
    assert not set(joints) & set(SMALL.reference_joints)
    assert all(frozenset(pair) not in bones for pair in dataset.hidden_edges)


def test_class_sets_the_phase_of_hidden_partners():
    dataset = synth_generate(SMALL)
    for seq in dataset.sequences:
        centered = seq.frames - seq.frames.mean(axis=0)
        for i, j in dataset.hidden_edges:
            alignment = float(np.sum(centered[:, i] * centered[:, j]))
            assert (alignment > 0.0) == (seq.label == 0)


def test_more_classes_use_a_codebook():
    spec = SynthSpec(num_classes=4, sequences_per_class=3, test_per_class=1, frames=8)
    dataset = synth_generate(spec)
    assert sorted({seq.label for seq in dataset.sequences}) == [0, 1, 2, 3]


def test_invalid_specs():
    with pytest.raises(ValueError):
        SynthSpec(test_per_class=200)
    with pytest.raises(ValueError):
        SynthSpec(num_classes=8, hidden_pairs=2)
    with pytest.raises(ValueError):
        synth_generate(SynthSpec(hidden_pairs=7, sequences_per_class=2, test_per_class=1))


def test_written_dataset_loads_back(tmp_path):
    spec = SynthSpec(sequences_per_class=4, test_per_class=2, frames=8)
    dataset = synth_generate(spec)
    manifest = write_dataset(dataset, tmp_path)
    assert (tmp_path / "hidden_edges.txt").is_file()
    loaded = load_dataset(manifest, reference_joints=spec.reference_joints)
    expected = dataset.graphs()
    assert len(loaded) == 8
    for a, b in zip(loaded, expected):
        np.testing.assert_array_equal(a.signal, b.signal)
        assert (a.label, a.split) == (b.label, b.split)


def test_probe_needs_both_splits():
    graphs = synth_generate(SynthSpec(sequences_per_class=2, test_per_class=0, frames=8)).graphs()
    with pytest.raises(EmptySplit):
        linear_probe_accuracy(graphs)


@pytest.mark.slow
def test_linear_probe_stays_below_ninety_percent():
    graphs = synth_generate().graphs()
    assert linear_probe_accuracy(graphs) < 0.9
