import numpy as np
import pytest

from cheblap.chebyshev import MAX_ORDER, aggregate, derivative_basis, forward_basis
from cheblap.gradcheck import relative_error
from cheblap.graph import LaplacianOperator
from cheblap.utils.errors import InvalidOrder, MismatchedBasis, ShapeMismatch


def operator(M):
    return LaplacianOperator(matrix=np.asarray(M, dtype=float))


def random_operator(rng, n, scale=1.0):
    return operator(rng.uniform(-scale, scale, size=(n, n)))


def scalar_terms(l, K, diagonal):
    t = [1.0 if diagonal else 0.0, l]
    for _ in range(2, K):
        t.append(2.0 * l * t[-1] - t[-2])
    return t[:K]


def test_order_one_is_identity():
    L = random_operator(np.random.default_rng(0), 4)
    basis = forward_basis(L, 1)
    np.testing.assert_array_equal(basis.terms, [np.eye(4)])


def test_second_term_on_two_path():
    basis = forward_basis(operator([[0.0, -1.0], [-1.0, 0.0]]), 3)
    np.testing.assert_array_equal(basis.terms[2], [[-1.0, 2.0], [2.0, -1.0]])


def test_first_terms_are_exact():
    L = random_operator(np.random.default_rng(1), 5)
    basis = derivative_basis(L, forward_basis(L, 4))
    np.testing.assert_array_equal(basis.terms[0], np.eye(5))
    np.testing.assert_array_equal(basis.terms[1], L.matrix)
    np.testing.assert_array_equal(basis.derivs[0], np.zeros((5, 5)))
    np.testing.assert_array_equal(basis.derivs[1], np.ones((5, 5)))


def test_matches_scalar_recursion_entrywise():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, K = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        L = random_operator(rng, n)
        terms = forward_basis(L, K).terms
        for i in range(n):
            for j in range(n):
                expected = scalar_terms(L.matrix[i, j], K, diagonal=i == j)
                assert np.max(np.abs(terms[:, i, j] - expected)) < 1e-12


def test_invalid_order():
    L = random_operator(np.random.default_rng(3), 3)
    with pytest.raises(InvalidOrder):
        forward_basis(L, 0)
    with pytest.raises(InvalidOrder):
        forward_basis(L, MAX_ORDER + 1)


def test_second_derivative_is_four_l():
    L = random_operator(np.random.default_rng(4), 4)
    basis = derivative_basis(L, forward_basis(L, 3))
    np.testing.assert_allclose(basis.derivs[2], 4.0 * L.matrix, rtol=0.0, atol=1e-15)


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(5)
    L = random_operator(rng, 3)
    K, h = 7, 1e-5
    basis = derivative_basis(L, forward_basis(L, K))
    numeric = np.zeros_like(basis.derivs)
    for i in range(3):
        for j in range(3):
            bump = np.zeros((3, 3))
            bump[i, j] = h
            plus = forward_basis(operator(L.matrix + bump), K).terms[:, i, j]
            minus = forward_basis(operator(L.matrix - bump), K).terms[:, i, j]
            numeric[:, i, j] = (plus - minus) / (2.0 * h)
    for k in range(K):
        assert relative_error(basis.derivs[k], numeric[k]) < 1e-6


def test_derivatives_require_matching_operator():
    rng = np.random.default_rng(6)
    L, other = random_operator(rng, 3), random_operator(rng, 3)
    with pytest.raises(MismatchedBasis):
        derivative_basis(other, forward_basis(L, 3))


def test_matrix_recursion_is_classical_and_not_differentiable():
    L = random_operator(np.random.default_rng(7), 4)
    basis = forward_basis(L, 3, recursion="matrix")
    np.testing.assert_allclose(
        basis.terms[2], 2.0 * L.matrix @ L.matrix - np.eye(4), rtol=0.0, atol=1e-14
    )
    with pytest.raises(MismatchedBasis):
        derivative_basis(L, basis)


def test_basis_is_read_only():
    basis = forward_basis(random_operator(np.random.default_rng(8), 3), 2)
    with pytest.raises(ValueError):
        basis.terms[0, 0, 0] = 2.0


def test_aggregate_order_one_is_transpose():
    rng = np.random.default_rng(9)
    psi = rng.normal(size=(3, 4))
    out = aggregate(forward_basis(random_operator(rng, 4), 1), psi)
    np.testing.assert_array_equal(out[0], psi.T)


def test_aggregate_neighbor_average_on_two_path():
    basis = forward_basis(operator([[0.0, 1.0], [1.0, 0.0]]), 2)
    out = aggregate(basis, np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out[1], [[2.0], [1.0]])


def test_aggregate_matches_loops_single_and_batched():
    rng = np.random.default_rng(10)
    n, s, K, B = 5, 3, 4, 2
    basis = forward_basis(random_operator(rng, n), K)
    psi = rng.normal(size=(B, s, n))
    expected = np.zeros((B, K, n, s))
    for b in range(B):
        for k in range(K):
            for i in range(n):
                for c in range(s):
                    expected[b, k, i, c] = sum(
                        basis.terms[k, i, j] * psi[b, c, j] for j in range(n)
                    )
    np.testing.assert_allclose(aggregate(basis, psi), expected, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(aggregate(basis, psi[0]), expected[0], rtol=0.0, atol=1e-12)


def test_aggregate_is_linear_in_the_signal():
    rng = np.random.default_rng(12)
    basis = forward_basis(random_operator(rng, 6), 5)
    for _ in range(20):
        psi1, psi2 = rng.normal(size=(2, 4, 6))
        a, b = rng.normal(size=2)
        np.testing.assert_allclose(
            aggregate(basis, a * psi1 + b * psi2),
            a * aggregate(basis, psi1) + b * aggregate(basis, psi2),
            rtol=0.0,
            atol=1e-12,
        )


def test_aggregate_shape_mismatch():
    basis = forward_basis(random_operator(np.random.default_rng(11), 4), 2)
    with pytest.raises(ShapeMismatch):
        aggregate(basis, np.zeros((3, 5)))
