import numpy as np
import pytest

from cheblap.graph import build_laplacian, rescale_spectrum
from cheblap.matrix_io import read_laplacian, read_matrix, write_laplacian, write_matrix
from cheblap.utils.errors import MissingFile, ParseError


def test_matrix_round_trip_is_bit_exact(tmp_path):
    M = np.random.default_rng(0).normal(size=(4, 4))
    write_matrix(tmp_path / "m.txt", M)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.txt"), M)


def test_laplacian_round_trip_keeps_header(tmp_path):
    A = np.random.default_rng(1).uniform(0.1, 1.0, size=(5, 5))
    L = rescale_spectrum(build_laplacian(A, "S-NDN"))
    write_laplacian(tmp_path / "l.txt", L)
    loaded = read_laplacian(tmp_path / "l.txt")
    np.testing.assert_array_equal(loaded.matrix, L.matrix)
    assert loaded.kind == L.kind
    assert loaded.rescaled
    assert (loaded.lambda_min, loaded.lambda_max) == (L.lambda_min, L.lambda_max)


@pytest.mark.parametrize(
    "text, line",
    [("2\n1 0\n0 x\n", 3), ("2\n1 0\n0\n", 3), ("two\n", 1), ("3\n1 0 0\n", 1)],
)
def test_malformed_matrices(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(ParseError) as error:
        read_matrix(path)
    assert error.value.line == line


def test_missing_matrix(tmp_path):
    with pytest.raises(MissingFile):
        read_matrix(tmp_path / "absent.txt")
