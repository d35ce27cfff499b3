"""Chebyshev basis {T_k(L)} under the elementwise recursion.

    T_0 = I,  T_1 = L,  T_k = 2 L o T_{k-1} - T_{k-2}

where ``o`` is the Hadamard product. Because the recursion is elementwise, the
Jacobian of [T_k]_ij is nonzero only with respect to L_ij and follows

    dT_0 = 0,  dT_1 = 1,  dT_k = 2 (T_{k-1} + L o dT_{k-1}) - dT_{k-2}.
"""
from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from exports import export

from cheblap.graph import LaplacianOperator, check_finite
from cheblap.utils.errors import InvalidOrder, MismatchedBasis, ShapeMismatch
from cheblap.utils.frozen import FrozenArrayModel

MAX_ORDER = 32

Recursion = Literal["hadamard", "matrix", "independent"]


@export
class ChebyshevBasis(FrozenArrayModel):
    # (K, n, n)
    terms: np.ndarray
    derivs: Optional[np.ndarray] = None
    # sha256 of the operator the terms were built from
    checksum: str = ""
    recursion: Recursion = "hadamard"

    @property
    def order(self) -> int:
        return self.terms.shape[0]

    @property
    def n(self) -> int:
        return self.terms.shape[1]


def _check_order(K: int) -> None:
    if not 1 <= K <= MAX_ORDER:
        raise InvalidOrder(f"order K must lie in [1, {MAX_ORDER}], got {K}")


@export
def forward_basis(
    L: LaplacianOperator, K: int, recursion: Literal["hadamard", "matrix"] = "hadamard"
) -> ChebyshevBasis:
    """Terms T_0..T_{K-1}.

    ``recursion="matrix"`` uses the classical matrix-product recursion; it is
    for comparison experiments only and cannot be differentiated.
    """
    _check_order(K)
    M = L.matrix
    check_finite(M, "Laplacian")
    n = M.shape[0]

    terms = np.empty((K, n, n))
    terms[0] = np.eye(n)
    if K >= 2:
        terms[1] = M
    for k in range(2, K):
        if recursion == "hadamard":
            terms[k] = 2.0 * M * terms[k - 1] - terms[k - 2]
        else:
            terms[k] = 2.0 * M @ terms[k - 1] - terms[k - 2]

    return ChebyshevBasis(terms=terms, checksum=L.checksum, recursion=recursion)


@export
def derivative_basis(L: LaplacianOperator, basis: ChebyshevBasis) -> ChebyshevBasis:
    """Fill ``derivs[k]_ij = d[T_k(L)]_ij / dL_ij``."""
    if basis.checksum != L.checksum:
        raise MismatchedBasis("basis was built from a different Laplacian")
    if basis.recursion != "hadamard":
        raise MismatchedBasis(f"{basis.recursion} bases carry no elementwise derivatives")

    M = L.matrix
    K, n = basis.order, basis.n
    derivs = np.empty((K, n, n))
    derivs[0] = 0.0
    if K >= 2:
        derivs[1] = 1.0
    for k in range(2, K):
        derivs[k] = 2.0 * (basis.terms[k - 1] + M * derivs[k - 1]) - derivs[k - 2]

    return ChebyshevBasis(
        terms=basis.terms,
        derivs=derivs,
        checksum=basis.checksum,
        recursion=basis.recursion,
    )


@export
def aggregate(basis: ChebyshevBasis, psi: np.ndarray) -> np.ndarray:
    """T_k(L) psi^T for every k.

    ``psi`` is (s, n) or batched (B, s, n); the result is (K, n, s) or (B, K, n, s).
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim not in (2, 3) or psi.shape[-1] != basis.n:
        raise ShapeMismatch(
            f"signal of shape {psi.shape} does not have {basis.n} node columns"
        )
    X = np.swapaxes(psi, -1, -2)
    if psi.ndim == 2:
        return basis.terms @ X
    return basis.terms[None] @ X[:, None]
