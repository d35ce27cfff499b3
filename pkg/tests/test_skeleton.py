import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cheblap.skeleton import (
    REFERENCE_SPAN,
    SBU_EDGES,
    SBU_PAIR_EDGES,
    SkeletonSequence,
    build_graph,
    edges_to_adjacency,
    load_dataset,
    normalize_sequence,
    read_edges,
    read_manifest,
    read_sequence,
    split_graphs,
    stack_graphs,
    temporal_chunk,
    write_edges,
    write_manifest,
    write_sequence,
)
from cheblap.synthetic import SBU_REST_POSE
from cheblap.utils.errors import (
    DegenerateReference,
    IndexOutOfRange,
    MissingFile,
    ParseError,
    TooShort,
)


def moving_pose(rng, T=12):
    return SBU_REST_POSE[None] + 0.05 * rng.normal(size=(T, 15, 3))


def sequence(frames, label=0):
    frames = np.asarray(frames, dtype=float)
    references = (1, 3, 6) if frames.shape[1] > 6 else (0, 1, 2)
    return SkeletonSequence(frames=frames, reference_joints=references, label=label)


def test_normalized_reference_frame():
    seq = normalize_sequence(sequence(moving_pose(np.random.default_rng(0))))
    p1, p2, p3 = (seq.frames[0, j] for j in seq.reference_joints)
    np.testing.assert_allclose((p2 + p3) / 2.0, np.zeros(3), atol=1e-12)
    assert np.linalg.norm(p2 - p3) == pytest.approx(REFERENCE_SPAN)
    # p2 - p3 on the x axis, the reference triangle in the x-y plane
    np.testing.assert_allclose((p2 - p3)[1:], np.zeros(2), atol=1e-12)
    np.testing.assert_allclose(p1[2], 0.0, atol=1e-12)


def test_normalization_is_a_fixed_point():
    once = normalize_sequence(sequence(moving_pose(np.random.default_rng(1))))
    twice = normalize_sequence(once)
    np.testing.assert_allclose(twice.frames, once.frames, rtol=0.0, atol=1e-9)


def test_normalization_removes_similarity_transforms():
    rng = np.random.default_rng(2)
    for trial in range(50):
        frames = moving_pose(rng)
        R = Rotation.random(random_state=rng).as_matrix()
        scale = 0.5 if trial == 0 else rng.uniform(0.3, 3.0)
        moved = scale * frames @ R.T + rng.uniform(-2.0, 2.0, size=3)
        np.testing.assert_allclose(
            normalize_sequence(sequence(moved)).frames,
            normalize_sequence(sequence(frames)).frames,
            rtol=0.0,
            atol=1e-6,
        )


def test_collinear_references_are_degenerate():
    frames = moving_pose(np.random.default_rng(3))
    frames[0, 1] = [0.0, 0.0, 0.0]
    frames[0, 3] = [1.0, 1.0, 1.0]
    frames[0, 6] = [2.0, 2.0, 2.0]
    with pytest.raises(DegenerateReference):
        normalize_sequence(sequence(frames))


def test_reference_joints_must_exist():
    with pytest.raises(IndexOutOfRange):
        SkeletonSequence(frames=np.zeros((2, 4, 3)), reference_joints=(0, 1, 6))


def test_constant_trajectory_repeats_its_position():
    p = np.random.default_rng(4).normal(size=(5, 3))
    signal = temporal_chunk(sequence(np.repeat(p[None], 9, axis=0)), 3)
    assert signal.shape == (9, 5)
    for c in range(3):
        np.testing.assert_allclose(signal[3 * c : 3 * c + 3], p.T, rtol=1e-15)


def test_chunk_means_by_hand():
    frames = np.zeros((8, 3, 3))
    frames[:, 0, 0] = np.arange(1.0, 9.0)
    signal = temporal_chunk(sequence(frames), 4)
    np.testing.assert_array_equal(signal[0::3, 0], [1.5, 3.5, 5.5, 7.5])


def test_frame_duplication_leaves_descriptor_unchanged():
    frames = np.random.default_rng(5).integers(-50, 50, size=(12, 4, 3)).astype(float)
    doubled = np.repeat(frames, 2, axis=0)
    np.testing.assert_array_equal(
        temporal_chunk(sequence(doubled), 4), temporal_chunk(sequence(frames), 4)
    )


def test_descriptor_size_does_not_depend_on_duration():
    rng = np.random.default_rng(6)
    for T in (4, 7, 33):
        assert temporal_chunk(sequence(rng.normal(size=(T, 3, 3))), 4).shape == (12, 3)


def test_too_short():
    with pytest.raises(TooShort):
        temporal_chunk(sequence(np.zeros((3, 3, 3))), 4)


def test_skeleton_adjacency():
    seq = sequence(moving_pose(np.random.default_rng(7)), label=5)
    graph = build_graph(seq, SBU_EDGES, 4, split="test")
    A = graph.adjacency
    assert A.shape == (15, 15)
    np.testing.assert_array_equal(A, A.T)
    assert A.sum() == 2 * len(SBU_EDGES)
    assert set(np.unique(A)) == {0.0, 1.0}
    assert A[1].sum() == 4  # neck: head, torso, both shoulders
    assert graph.signal.shape == (12, 15)
    assert (graph.label, graph.split) == (5, "test")


def test_empty_and_repeated_edge_lists():
    np.testing.assert_array_equal(edges_to_adjacency([], 4), np.zeros((4, 4)))
    edges = [(0, 1), (2, 3)]
    np.testing.assert_array_equal(
        edges_to_adjacency(edges + edges, 4), edges_to_adjacency(edges, 4)
    )


def test_edge_out_of_range():
    with pytest.raises(IndexOutOfRange):
        edges_to_adjacency([(0, 15)], 15)


def test_two_person_graph_has_no_cross_edges():
    A = edges_to_adjacency(SBU_PAIR_EDGES, 30)
    assert not A[:15, 15:].any()
    np.testing.assert_array_equal(A[:15, :15], A[15:, 15:])


def write_dataset(root, sequences):
    (root / "seqs").mkdir()
    entries = []
    for index, (seq, split) in enumerate(sequences):
        rel = f"seqs/{index}.txt"
        write_sequence(root / rel, seq)
        entries.append((rel, seq.label, split))
    write_manifest(root / "manifest.txt", entries)
    write_edges(root / "edges.txt", SBU_EDGES)
    return root / "manifest.txt"


def test_sequence_file_round_trip(tmp_path):
    seq = sequence(moving_pose(np.random.default_rng(8)))
    write_sequence(tmp_path / "seq.txt", seq)
    np.testing.assert_array_equal(read_sequence(tmp_path / "seq.txt").frames, seq.frames)


def test_edges_round_trip(tmp_path):
    write_edges(tmp_path / "edges.txt", SBU_EDGES)
    assert read_edges(tmp_path / "edges.txt") == list(SBU_EDGES)


def test_load_dataset_keeps_manifest_order(tmp_path):
    rng = np.random.default_rng(9)
    first, second = sequence(moving_pose(rng), 1), sequence(moving_pose(rng), 0)
    manifest = write_dataset(tmp_path, [(first, "train"), (second, "test")])
    graphs = load_dataset(manifest, workers=2)
    assert [g.label for g in graphs] == [1, 0]
    assert [g.split for g in graphs] == ["train", "test"]
    expected = build_graph(normalize_sequence(first), SBU_EDGES, 4)
    np.testing.assert_array_equal(graphs[0].signal, expected.signal)
    assert len(split_graphs(graphs, "test")) == 1
    signals, labels = stack_graphs(graphs)
    assert signals.shape == (2, 12, 15)
    np.testing.assert_array_equal(labels, [1, 0])


def test_malformed_float_names_the_line(tmp_path):
    seq = sequence(moving_pose(np.random.default_rng(10), T=4))
    manifest = write_dataset(tmp_path, [(seq, "train")])
    path = tmp_path / "seqs" / "0.txt"
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(" ", " abc ", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="0.txt:3:"):
        load_dataset(manifest)


def test_missing_sequence_file(tmp_path):
    write_manifest(tmp_path / "manifest.txt", [("nowhere.txt", 0, "train")])
    write_edges(tmp_path / "edges.txt", SBU_EDGES)
    with pytest.raises(MissingFile):
        load_dataset(tmp_path / "manifest.txt")


def test_missing_edge_list(tmp_path):
    write_manifest(tmp_path / "manifest.txt", [])
    with pytest.raises(MissingFile):
        load_dataset(tmp_path / "manifest.txt")


@pytest.mark.parametrize(
    "line", ["a.txt 0", "a.txt zero train", "a.txt 0 validation"]
)
def test_bad_manifest_lines(tmp_path, line):
    path = tmp_path / "manifest.txt"
    path.write_text(f"# header\nb.txt 1 test\n{line}\n")
    with pytest.raises(ParseError, match="manifest.txt:3:"):
        read_manifest(path)
