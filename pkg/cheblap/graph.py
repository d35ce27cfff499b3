"""Laplacian parametrizations built from a trainable adjacency matrix.

Every operator here is a pure function of its inputs. Degrees follow the column
convention ``[D(A)]_uu = sum_v A_vu``; ``D(A^T)`` holds the row sums.
"""
from __future__ import annotations

import hashlib
import logging
from enum import Enum
from typing import Literal, Optional

import numpy as np
from exports import export
from pydantic import BaseModel, validator
from scipy.sparse.linalg import eigsh

from cheblap.utils.errors import (
    DegenerateDegree,
    DegenerateSpectrum,
    NonFinite,
    NotSymmetric,
    ShapeMismatch,
)
from cheblap.utils.frozen import FrozenArrayModel

logger = logging.getLogger(__name__)

EPSILON = 1e-8
SYMMETRY_TOL = 1e-10
MIN_SPECTRAL_GAP = 1e-9
# largest n solved with a full symmetric eigendecomposition
FULL_EIGENSOLVE_MAX_N = 64


@export
class Parametrization(str, Enum):
    COMB = "COMB"
    NDRW = "NDRW"
    DRW = "DRW"
    NDN = "NDN"
    DN = "DN"

    @property
    def differential(self) -> bool:
        """Kinds carrying the leading identity (or degree) term."""
        return self in (Parametrization.COMB, Parametrization.DRW, Parametrization.DN)


@export
class LaplacianKind(BaseModel):
    base: Parametrization
    symmetric: bool = False

    class Config:
        frozen = True

    @classmethod
    def parse(cls, text: str) -> LaplacianKind:
        name = text.strip().upper()
        symmetric = name.startswith("S-")
        if symmetric:
            name = name[2:]
        try:
            return cls(base=Parametrization(name), symmetric=symmetric)
        except ValueError:
            raise ValueError(f"unknown Laplacian kind {text!r}") from None

    def plain(self) -> LaplacianKind:
        return LaplacianKind(base=self.base, symmetric=False)

    def __str__(self) -> str:
        return f"S-{self.base.value}" if self.symmetric else self.base.value


ALL_KINDS: tuple[LaplacianKind, ...] = tuple(
    LaplacianKind(base=base, symmetric=symmetric)
    for symmetric in (False, True)
    for base in Parametrization
)
RANDOM_WALK = (Parametrization.NDRW, Parametrization.DRW)


@export
class AdjacencyParam(FrozenArrayModel):
    """The free nonnegative matrix every Laplacian is built from."""

    values: np.ndarray

    @validator("values")
    def _square_finite_nonnegative(cls, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        _check_square(values, "adjacency")
        check_finite(values, "adjacency")
        if np.any(values < 0):
            raise ValueError("adjacency entries must be nonnegative")
        return values

    @classmethod
    def projected(cls, values: np.ndarray) -> AdjacencyParam:
        """Clamp negative entries at 0 before construction."""
        return cls(values=np.maximum(np.asarray(values, dtype=float), 0.0))

    @property
    def n(self) -> int:
        return self.values.shape[0]


@export
class LaplacianOperator(FrozenArrayModel):
    matrix: np.ndarray
    # None for operators that mix several kinds
    kind: Optional[LaplacianKind] = None
    rescaled: bool = False
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def scale(self) -> float:
        """d(output)/d(input) of the rescaling map, with the bounds held constant."""
        if not self.rescaled:
            return 1.0
        return 2.0 / (self.lambda_max - self.lambda_min)

    @property
    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()


def check_finite(M: np.ndarray, what: str = "matrix") -> None:
    if not np.all(np.isfinite(M)):
        raise NonFinite(f"{what} holds NaN or Inf entries")


def _check_square(M: np.ndarray, what: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeMismatch(f"{what} must be square, got shape {M.shape}")


@export
def degree_matrix(
    A: np.ndarray, axis: Literal["columns", "rows"] = "columns"
) -> np.ndarray:
    """Diagonal of D(A) (column sums) or, for ``axis="rows"``, of D(A^T)."""
    A = np.asarray(A, dtype=float)
    _check_square(A, "adjacency")
    check_finite(A, "adjacency")
    if axis == "columns":
        return A.sum(axis=0)
    if axis == "rows":
        return A.sum(axis=1)
    raise ValueError(f"axis must be 'columns' or 'rows', got {axis!r}")


def effective_adjacency(A: np.ndarray, kind: LaplacianKind) -> np.ndarray:
    return A + A.T if kind.symmetric else A


def _needed_degrees(kind: LaplacianKind) -> tuple[str, ...]:
    match kind.base:
        case Parametrization.COMB:
            return ("rows",)
        case Parametrization.NDRW | Parametrization.DRW:
            return ("columns",)
        case _:
            return ("rows", "columns")


def floored_degrees(A: np.ndarray, eps: float = EPSILON) -> tuple[np.ndarray, np.ndarray]:
    """(row degrees, column degrees) of A, clamped below at eps."""
    return (
        np.maximum(degree_matrix(A, "rows"), eps),
        np.maximum(degree_matrix(A, "columns"), eps),
    )


@export
def build_laplacian(
    A: AdjacencyParam | np.ndarray,
    kind: LaplacianKind | str,
    *,
    strict: bool = False,
    eps: float = EPSILON,
) -> LaplacianOperator:
    if isinstance(kind, str):
        kind = LaplacianKind.parse(kind)
    values = A.values if isinstance(A, AdjacencyParam) else np.asarray(A, dtype=float)
    Ae = effective_adjacency(values, kind)

    if strict:
        for axis in _needed_degrees(kind):
            degrees = degree_matrix(Ae, axis)
            low = np.flatnonzero(degrees < eps)
            if low.size:
                raise DegenerateDegree(
                    f"{kind}: {axis} degree below {eps} at nodes {low.tolist()}"
                )

    n = Ae.shape[0]
    row, col = floored_degrees(Ae, eps)
    match kind.base:
        case Parametrization.COMB:
            matrix = np.diag(degree_matrix(Ae, "rows")) - Ae
        case Parametrization.NDRW:
            matrix = Ae / col[None, :]
        case Parametrization.DRW:
            matrix = np.eye(n) - Ae / col[None, :]
        case Parametrization.NDN:
            matrix = Ae / np.sqrt(row)[:, None] / np.sqrt(col)[None, :]
        case Parametrization.DN:
            matrix = np.eye(n) - Ae / np.sqrt(row)[:, None] / np.sqrt(col)[None, :]

    return LaplacianOperator(matrix=matrix, kind=kind)


@export
def extreme_eigenvalues(M: np.ndarray, tol: float = SYMMETRY_TOL) -> tuple[float, float]:
    M = np.asarray(M, dtype=float)
    _check_square(M, "matrix")
    check_finite(M)
    asymmetry = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asymmetry > tol * max(1.0, np.max(np.abs(M))):
        raise NotSymmetric(f"asymmetry {asymmetry:.3e} exceeds {tol:.1e}")

    n = M.shape[0]
    if n <= FULL_EIGENSOLVE_MAX_N:
        eigenvalues = np.linalg.eigvalsh(M)
        return float(eigenvalues[0]), float(eigenvalues[-1])

    lambda_min = eigsh(M, k=1, which="SA", return_eigenvectors=False, tol=1e-12)[0]
    lambda_max = eigsh(M, k=1, which="LA", return_eigenvectors=False, tol=1e-12)[0]
    return float(lambda_min), float(lambda_max)


@export
def rescale_spectrum(L: LaplacianOperator) -> LaplacianOperator:
    """Map the spectrum of L affinely onto [-1, 1].

    Non-symmetric operators take their bounds from the symmetric part (L + L^T)/2.
    """
    M = L.matrix
    if not np.allclose(M, M.T, rtol=0.0, atol=SYMMETRY_TOL):
        M = (M + M.T) / 2.0
    lambda_min, lambda_max = extreme_eigenvalues(M)
    if lambda_max - lambda_min < MIN_SPECTRAL_GAP:
        raise DegenerateSpectrum(
            f"lambda_max - lambda_min = {lambda_max - lambda_min:.3e} is below {MIN_SPECTRAL_GAP}"
        )

    n = L.n
    matrix = 2.0 * (L.matrix - lambda_min * np.eye(n)) / (lambda_max - lambda_min) - np.eye(n)
    return LaplacianOperator(
        matrix=matrix,
        kind=L.kind,
        rescaled=True,
        lambda_min=lambda_min,
        lambda_max=lambda_max,
    )


@export
def laplacian_violations(L: LaplacianOperator, tol: float = SYMMETRY_TOL) -> list[str]:
    """Invariants of L that do not hold; an empty list means L is a valid operator."""
    violations = []
    M = L.matrix
    if not np.all(np.isfinite(M)):
        return ["non-finite entries"]

    if L.kind is not None and not L.rescaled:
        match L.kind.base:
            case Parametrization.COMB:
                worst = np.max(np.abs(M.sum(axis=1)))
                if worst > tol:
                    violations.append(f"COMB row sums deviate from 0 by {worst:.3e}")
            case Parametrization.NDRW:
                worst = np.max(np.abs(M.sum(axis=0) - 1.0))
                if worst > tol:
                    violations.append(f"NDRW column sums deviate from 1 by {worst:.3e}")
            case Parametrization.DRW:
                worst = np.max(np.abs(M.sum(axis=0)))
                if worst > tol:
                    violations.append(f"DRW column sums deviate from 0 by {worst:.3e}")

    # column normalization breaks the symmetry of A + A^T for the random-walk kinds
    if L.kind is not None and L.kind.symmetric and L.kind.base not in RANDOM_WALK:
        worst = np.max(np.abs(M - M.T))
        if worst > tol:
            violations.append(f"symmetric kind deviates from its transpose by {worst:.3e}")

    if L.rescaled and np.allclose(M, M.T, rtol=0.0, atol=tol):
        lambda_min, lambda_max = extreme_eigenvalues((M + M.T) / 2.0)
        if lambda_min < -1.0 - 1e-8 or lambda_max > 1.0 + 1e-8:
            violations.append(
                f"rescaled spectrum [{lambda_min:.6f}, {lambda_max:.6f}] leaves [-1, 1]"
            )

    return violations
