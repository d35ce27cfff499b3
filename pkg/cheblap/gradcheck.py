"""Central finite-difference oracles for the hand-derived gradients.

``check_kind`` verifies the whole operator path, adjacency -> Laplacian ->
(optional rescaling) -> Chebyshev terms, on the surrogate loss
``sum_k <C_k, T_k(L)>_F`` with a fixed random C, whose basis gradient is C.
The rescaling bounds are held fixed in the perturbed evaluations, matching the
stop-gradient the analytic path uses. ``check_model`` probes the full network.
"""
from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional

import numpy as np
from exports import export
from pydantic import BaseModel

from cheblap.chebyshev import derivative_basis, forward_basis
from cheblap.graph import (
    ALL_KINDS,
    LaplacianKind,
    LaplacianOperator,
    build_laplacian,
    rescale_spectrum,
)
from cheblap.laplacian_grad import (
    SparseJacobian,
    apply_parametrization_jacobian,
    grad_wrt_laplacian,
)
from cheblap.model import ModelParams, classify_and_loss, model_backward, model_forward

logger = logging.getLogger(__name__)

STEP = 1e-5
THRESHOLD = 1e-4
# entrywise denominators never drop below this share of the largest gradient entry
ERROR_FLOOR = 1e-4
# relative perturbation applied by the corrupted-Jacobian negative control
CORRUPTION = 1e-2
MAX_NODES = 16


@export
def central_difference(
    func: Callable[[np.ndarray], float], x0: np.ndarray, h: float = STEP
) -> np.ndarray:
    """Gradient of ``func`` at ``x0`` by centered differences, entry by entry."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    for index in np.ndindex(x0.shape):
        x = x0.copy()
        x[index] = x0[index] + h
        f_plus = func(x)
        x[index] = x0[index] - h
        f_minus = func(x)
        grad[index] = (f_plus - f_minus) / (2.0 * h)
    return grad


@export
def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ERROR_FLOOR) -> float:
    """max |a - f| / max(|a|, |f|, floor * max(1, ||a||_inf, ||f||_inf)) over entries."""
    analytic, numeric = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    if analytic.size == 0:
        return 0.0
    magnitude = np.maximum(np.abs(analytic), np.abs(numeric))
    scale = np.maximum(magnitude, floor * max(1.0, float(magnitude.max())))
    return float(np.max(np.abs(analytic - numeric) / scale))


def _rescale_with(L: LaplacianOperator, lambda_min: float, lambda_max: float) -> LaplacianOperator:
    eye = np.eye(L.n)
    matrix = 2.0 * (L.matrix - lambda_min * eye) / (lambda_max - lambda_min) - eye
    return LaplacianOperator(
        matrix=matrix, kind=L.kind, rescaled=True, lambda_min=lambda_min, lambda_max=lambda_max
    )


@export
def surrogate_loss(
    kind: LaplacianKind,
    A: np.ndarray,
    C: np.ndarray,
    bounds: Optional[tuple[float, float]] = None,
) -> float:
    L = build_laplacian(A, kind)
    if bounds is not None:
        L = _rescale_with(L, *bounds)
    basis = forward_basis(L, C.shape[0])
    return float(np.sum(C * basis.terms))


@export
def surrogate_gradient(
    kind: LaplacianKind, A: np.ndarray, C: np.ndarray, orthogonal: bool = False
) -> tuple[np.ndarray, Optional[tuple[float, float]]]:
    """Analytic dLoss/dA and the rescaling bounds it was taken at."""
    raw = build_laplacian(A, kind)
    L = rescale_spectrum(raw) if orthogonal else raw
    basis = derivative_basis(L, forward_basis(L, C.shape[0]))
    grad_L = grad_wrt_laplacian(C, basis) * L.scale
    bounds = (L.lambda_min, L.lambda_max) if orthogonal else None
    return apply_parametrization_jacobian(kind, A, raw, grad_L), bounds


@export
class KindReport(BaseModel):
    kind: str
    max_rel_error: float
    probes: int
    # max |exact - printed| / max |exact| over the materialized Jacobian
    printed_deviation: float
    passed: bool


def printed_deviation(kind: LaplacianKind, A: np.ndarray) -> float:
    jacobian = SparseJacobian.of(kind, A)
    exact = jacobian.materialize("exact")
    printed = jacobian.materialize("printed")
    scale = max(float(np.max(np.abs(exact))), 1e-300)
    return float(np.max(np.abs(exact - printed)) / scale)


@export
def check_kind(
    kind: LaplacianKind,
    n: int = 5,
    K: int = 4,
    seeds: Iterable[int] = (0,),
    *,
    orthogonal: bool = False,
    h: float = STEP,
    threshold: float = THRESHOLD,
    corrupt: bool = False,
) -> KindReport:
    if not 1 <= n <= MAX_NODES:
        raise ValueError(f"gradient checks run on 1..{MAX_NODES} nodes, got {n}")
    worst, probes, deviation = 0.0, 0, 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        A = rng.uniform(0.1, 1.0, size=(n, n))
        C = rng.normal(size=(K, n, n))
        analytic, bounds = surrogate_gradient(kind, A, C, orthogonal)
        if corrupt:
            analytic = analytic * (1.0 + CORRUPTION)
        numeric = central_difference(lambda X: surrogate_loss(kind, X, C, bounds), A, h)
        worst = max(worst, relative_error(analytic, numeric))
        probes += A.size
        deviation = max(deviation, printed_deviation(kind, A))
    report = KindReport(
        kind=str(kind),
        max_rel_error=worst,
        probes=probes,
        printed_deviation=deviation,
        passed=worst < threshold,
    )
    logger.debug("gradcheck %s: %s", kind, report)
    return report


@export
def run_gradcheck(
    n: int = 5,
    K: int = 4,
    kinds: Iterable[LaplacianKind] = ALL_KINDS,
    seeds: Iterable[int] = (0,),
    **options,
) -> list[KindReport]:
    seeds = tuple(seeds)
    return [check_kind(kind, n, K, seeds, **options) for kind in kinds]


@export
def format_report(reports: Iterable[KindReport]) -> str:
    lines = [f"{'kind':<8} {'max_rel_error':>14} {'probes':>7} {'printed_dev':>12}  result"]
    for r in reports:
        result = "ok" if r.passed else "FAIL"
        lines.append(
            f"{r.kind:<8} {r.max_rel_error:>14.3e} {r.probes:>7d} {r.printed_deviation:>12.3e}  {result}"
        )
    return "\n".join(lines)


@export
def check_model(
    params: ModelParams,
    signals: np.ndarray,
    labels: np.ndarray,
    names: Optional[Iterable[str]] = None,
    h: float = STEP,
) -> dict[str, float]:
    """Max relative error per trainable tensor of the summed network loss.

    Only meaningful without spectral rescaling, whose bounds the analytic path
    treats as constants.
    """
    tensors = params.trainable()
    names = list(names) if names is not None else list(tensors)
    analytic = model_backward(params, model_forward(params, signals), labels).tensors

    def loss_at(name: str) -> Callable[[np.ndarray], float]:
        target = tensors[name]

        def loss(x: np.ndarray) -> float:
            saved = target.copy()
            target[...] = x
            try:
                pooled = model_forward(params, signals).pooled
                return classify_and_loss(pooled, params, labels)[0]
            finally:
                target[...] = saved

        return loss

    return {
        name: relative_error(
            analytic[name], central_difference(loss_at(name), tensors[name], h)
        )
        for name in names
    }
