"""Backward pass from the Chebyshev terms down to the trainable adjacency.

Three stages, each a pure function:

1. ``grad_wrt_laplacian`` collapses the diagonal per-term Jacobians into an
   elementwise multiply-accumulate over k.
2. ``apply_parametrization_jacobian`` applies dL/dA for the kind in closed form,
   never materializing the n^2 x n^2 matrix.
3. ``symmetrize_gradient`` ties (p, q) and (q, p) for symmetric kinds.

``jacobian_entry`` and ``printed_jacobian_entry`` evaluate single entries for
brute-force probes; the printed form follows the published table, whose
normalized-kind indicator over-counts one degree term (see ``SparseJacobian``).
"""
from __future__ import annotations

import logging
from typing import Literal, Union

import numpy as np
from exports import export
from pydantic import validator

from cheblap.chebyshev import ChebyshevBasis
from cheblap.graph import (
    EPSILON,
    AdjacencyParam,
    LaplacianKind,
    LaplacianOperator,
    Parametrization,
    build_laplacian,
    check_finite,
    effective_adjacency,
    floored_degrees,
)
from cheblap.utils.errors import DivisionGuard, ShapeMismatch
from cheblap.utils.frozen import FrozenArrayModel

logger = logging.getLogger(__name__)


@export
class BasisGradients(FrozenArrayModel):
    """nabla[k] = dLoss / dT_k(L), shape (K, n, n)."""

    nabla: np.ndarray

    @validator("nabla")
    def _finite(cls, nabla: np.ndarray) -> np.ndarray:
        nabla = np.asarray(nabla, dtype=float)
        if nabla.ndim != 3 or nabla.shape[1] != nabla.shape[2]:
            raise ShapeMismatch(f"expected (K, n, n) gradients, got {nabla.shape}")
        check_finite(nabla, "basis gradients")
        return nabla

    @property
    def order(self) -> int:
        return self.nabla.shape[0]


@export
def grad_wrt_laplacian(
    grads: BasisGradients | np.ndarray, basis: ChebyshevBasis
) -> np.ndarray:
    nabla = grads.nabla if isinstance(grads, BasisGradients) else np.asarray(grads)
    if basis.derivs is None:
        raise ValueError("basis has no derivatives; call derivative_basis first")
    if nabla.shape != basis.derivs.shape:
        raise ShapeMismatch(
            f"gradients {nabla.shape} do not match basis derivatives {basis.derivs.shape}"
        )
    return np.einsum("kij,kij->ij", basis.derivs, nabla)


@export
def symmetrize_gradient(gradA: np.ndarray) -> np.ndarray:
    gradA = np.asarray(gradA, dtype=float)
    return gradA + gradA.T


def _non_differential_part(base: Parametrization, L: np.ndarray) -> np.ndarray:
    if base in (Parametrization.DRW, Parametrization.DN):
        return np.eye(L.shape[0]) - L
    return L


def _plain_vjp(base: Parametrization, Ae: np.ndarray, L: np.ndarray, G: np.ndarray) -> np.ndarray:
    """sum_ij G_ij dL_ij/dAe_pq for a plain kind, as an (n, n) matrix over (p, q)."""
    row, col = floored_degrees(Ae)
    N = _non_differential_part(base, L)
    match base:
        case Parametrization.COMB:
            # L_ij = delta_ij r_i - A_ij
            return np.diag(G)[:, None] - G
        case Parametrization.NDRW | Parametrization.DRW:
            # dN_ij/dA_pq = 1{j=q} (delta_ip - N_ij) / d_q
            gA = (G - np.sum(G * N, axis=0)[None, :]) / col[None, :]
        case Parametrization.NDN | Parametrization.DN:
            # dN_ij/dA_pq = delta_ip delta_jq / sqrt(r_p d_q)
            #              - N_ij delta_ip / (2 r_p) - N_ij delta_jq / (2 d_q)
            gA = (
                G / np.sqrt(row)[:, None] / np.sqrt(col)[None, :]
                - 0.5 * np.sum(G * N, axis=1)[:, None] / row[:, None]
                - 0.5 * np.sum(G * N, axis=0)[None, :] / col[None, :]
            )
    return -gA if base.differential else gA


def _structural_support(base: Parametrization, i: int, j: int, p: int, q: int) -> bool:
    """Whether L_ij can depend on A_pq at all."""
    match base:
        case Parametrization.COMB:
            return (i == j and p == i) or (i == p and j == q)
        case Parametrization.NDRW | Parametrization.DRW:
            return j == q
        case _:
            return i == p or j == q


def jacobian_entry(
    base: Parametrization, Ae: np.ndarray, L: np.ndarray, i: int, j: int, p: int, q: int
) -> float:
    """Exact dL_ij / dAe_pq of a plain kind."""
    if not _structural_support(base, i, j, p, q):
        return 0.0
    row, col = floored_degrees(Ae)
    N = _non_differential_part(base, L)
    delta_ip, delta_jq = float(i == p), float(j == q)
    match base:
        case Parametrization.COMB:
            return float(i == j) * delta_ip - delta_ip * delta_jq
        case Parametrization.NDRW | Parametrization.DRW:
            value = delta_jq * (delta_ip - N[i, j]) / col[q]
        case Parametrization.NDN | Parametrization.DN:
            value = (
                delta_ip * delta_jq / np.sqrt(row[p] * col[q])
                - N[i, j] * delta_ip / (2.0 * row[p])
                - N[i, j] * delta_jq / (2.0 * col[q])
            )
    return -value if base.differential else value


def printed_jacobian_entry(
    base: Parametrization,
    Ae: np.ndarray,
    L: np.ndarray,
    i: int,
    j: int,
    p: int,
    q: int,
    *,
    eps: float = EPSILON,
    strict: bool = False,
) -> float:
    """dL_ij / dAe_pq as printed in the published parametrization table.

    Indicators are read together with the structural support of each kind and
    L_ij denotes the non-differential operator. Denominators A_pq below eps are
    floored, or raise DivisionGuard when strict.
    """
    if not _structural_support(base, i, j, p, q):
        return 0.0
    row, col = floored_degrees(Ae)
    N = _non_differential_part(base, L)
    delta_ip, delta_jq = float(i == p), float(j == q)
    match base:
        case Parametrization.COMB:
            return float(i == j and p != q) - float(i != j)
        case Parametrization.NDRW | Parametrization.DRW:
            value = delta_jq * (delta_ip - N[i, j]) / col[q]
        case Parametrization.NDN | Parametrization.DN:
            a_pq = Ae[p, q]
            if a_pq < eps:
                if strict:
                    raise DivisionGuard(f"A[{p}, {q}] = {a_pq:.3e} is below {eps}")
                a_pq = eps
            cross = Ae[p, q] / row[p] + Ae[p, q] / col[q]
            value = N[i, j] / (2.0 * a_pq) * (2.0 * delta_ip * delta_jq - cross)
    return -value if base.differential else value


@export
class SparseJacobian(FrozenArrayModel):
    """Implicit dL/dA for one kind, or the symmetry tie J_s when ``kind`` is "symmetry"."""

    kind: Union[LaplacianKind, Literal["symmetry"]]
    # raw adjacency (before symmetrization) and the unrescaled operator built from it
    adjacency: np.ndarray
    laplacian: np.ndarray

    @classmethod
    def of(cls, kind: LaplacianKind, A: AdjacencyParam | np.ndarray) -> SparseJacobian:
        values = A.values if isinstance(A, AdjacencyParam) else np.asarray(A, dtype=float)
        L = build_laplacian(values, kind)
        return cls(kind=kind, adjacency=values, laplacian=L.matrix)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def apply(self, gradL: np.ndarray) -> np.ndarray:
        gradL = np.asarray(gradL, dtype=float)
        if gradL.shape != (self.n, self.n):
            raise ShapeMismatch(f"gradient {gradL.shape} does not match n = {self.n}")
        if self.kind == "symmetry":
            return symmetrize_gradient(gradL)
        Ae = effective_adjacency(self.adjacency, self.kind)
        gradAe = _plain_vjp(self.kind.base, Ae, self.laplacian, gradL)
        return symmetrize_gradient(gradAe) if self.kind.symmetric else gradAe

    def materialize(self, form: Literal["exact", "printed"] = "exact") -> np.ndarray:
        """The full (n^2, n^2) matrix with rows ij and columns pq, for probes only."""
        n = self.n
        if self.kind == "symmetry":
            J = np.zeros((n * n, n * n))
            for i in range(n):
                for j in range(n):
                    J[i * n + j, i * n + j] += 1.0
                    J[i * n + j, j * n + i] += 1.0
            return J

        entry = jacobian_entry if form == "exact" else printed_jacobian_entry
        Ae = effective_adjacency(self.adjacency, self.kind)
        J = np.zeros((n * n, n * n))
        for i in range(n):
            for j in range(n):
                for p in range(n):
                    for q in range(n):
                        J[i * n + j, p * n + q] = entry(
                            self.kind.base, Ae, self.laplacian, i, j, p, q
                        )
        if self.kind.symmetric:
            tie = SparseJacobian(kind="symmetry", adjacency=self.adjacency, laplacian=self.laplacian)
            J = J @ tie.materialize()
        return J


@export
def apply_parametrization_jacobian(
    kind: LaplacianKind,
    A: AdjacencyParam | np.ndarray,
    L: LaplacianOperator,
    gradL: np.ndarray,
) -> np.ndarray:
    """dLoss/dA from dLoss/dL, with J_s composed in for symmetric kinds.

    ``L`` must be the unrescaled operator ``build_laplacian(A, kind)``; callers
    training on a rescaled operator first multiply by ``rescaled.scale``.
    """
    if L.rescaled:
        raise ValueError("pass the unrescaled operator; scale the gradient by L.scale instead")
    gradL = np.asarray(gradL, dtype=float)
    check_finite(gradL, "Laplacian gradient")
    values = A.values if isinstance(A, AdjacencyParam) else np.asarray(A, dtype=float)
    jacobian = SparseJacobian(kind=kind, adjacency=values, laplacian=L.matrix)
    return jacobian.apply(gradL)


@export
def project_gradient(A: np.ndarray, gradA: np.ndarray) -> np.ndarray:
    """Zero the components that would push an entry already at 0 below it."""
    gradA = np.array(gradA, dtype=float, copy=True)
    gradA[(np.asarray(A) <= 0.0) & (gradA > 0.0)] = 0.0
    return gradA
