"""Training loop, evaluation and basis diagnostics.

One trainer owns the parameters. Batches go through ``batch_gradients`` (which
may shard over threads against read-only parameters); the mean gradient then
takes one Adam step, after which the adjacency is clamped back to A >= 0.
The global learning rate follows the speed of change of the mean training loss.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from exports import export
from pydantic import BaseModel
from sklearn.metrics import accuracy_score, balanced_accuracy_score, confusion_matrix

from cheblap.chebyshev import ChebyshevBasis
from cheblap.config import TrainConfig
from cheblap.graph import Parametrization, laplacian_violations
from cheblap.laplacian_grad import apply_parametrization_jacobian, project_gradient
from cheblap.model import (
    Mode,
    ModelParams,
    OperatorTrace,
    batch_gradients,
    build_operator,
    init_params,
    predict,
)
from cheblap.optim import AdamState, adam_step, lr_update
from cheblap.skeleton import TrajectoryGraph, split_graphs, stack_graphs
from cheblap.utils.errors import (
    CheblapError,
    DegenerateSpectrum,
    EmptySplit,
    NonFinite,
    NumericalAbort,
)

logger = logging.getLogger(__name__)

# mean cross entropy above this is treated as divergence
DIVERGENCE_LOSS = 1e4


@export
class GramReport(BaseModel):
    gram: np.ndarray
    offdiag_energy: float

    class Config:
        arbitrary_types_allowed = True


@export
def basis_diagnostics(basis: ChebyshevBasis) -> GramReport:
    """Frobenius Gram matrix of the terms and its normalized off-diagonal energy."""
    gram = np.einsum("kij,lij->kl", basis.terms, basis.terms)
    squared = gram**2
    diagonal = np.trace(squared)
    offdiag = squared.sum() - diagonal
    energy = float(offdiag / diagonal) if diagonal > 0 else 0.0
    return GramReport(gram=gram, offdiag_energy=energy)


@export
class Evaluation(BaseModel):
    # class-averaged
    accuracy: float
    sample_accuracy: float
    per_class: list[float]
    confusion: np.ndarray

    class Config:
        arbitrary_types_allowed = True


@export
def evaluate(params: ModelParams, graphs: list[TrajectoryGraph]) -> Evaluation:
    if not graphs:
        raise EmptySplit("cannot evaluate on an empty split")
    signals, labels = stack_graphs(graphs)
    predicted, _ = predict(params, signals)
    classes = list(range(params.config.num_classes))
    confusion = confusion_matrix(labels, predicted, labels=classes)
    support = confusion.sum(axis=1)
    per_class = [
        float(confusion[c, c] / support[c]) if support[c] else math.nan for c in classes
    ]
    return Evaluation(
        accuracy=float(balanced_accuracy_score(labels, predicted)),
        sample_accuracy=float(accuracy_score(labels, predicted)),
        per_class=per_class,
        confusion=confusion,
    )


@export
def tll_penalty(
    adjacency_terms: np.ndarray, strength: float
) -> tuple[float, np.ndarray]:
    """strength * sum_{k != l} <L_k, L_l>_F^2 and its gradient w.r.t. each L_k."""
    gram = np.einsum("kij,lij->kl", adjacency_terms, adjacency_terms)
    offdiag = gram - np.diag(np.diag(gram))
    value = strength * float(np.sum(offdiag**2))
    grad = 4.0 * strength * np.einsum("kl,lij->kij", offdiag, adjacency_terms)
    return value, grad


def _tll_penalty_gradient(
    params: ModelParams, operator: OperatorTrace
) -> tuple[float, np.ndarray]:
    """Penalty pulled back to the K adjacencies through each parametrization."""
    kind = params.config.laplacian_kind
    value, grad_L = tll_penalty(operator.basis.terms, params.config.tll_penalty)
    grad_A = np.stack(
        [
            apply_parametrization_jacobian(kind, A_k, L_k, grad_L[k])
            for k, (A_k, L_k) in enumerate(zip(params.adjacency, operator.raw))
        ]
    )
    return value, grad_A


@export
class EpochMetrics(BaseModel):
    epoch: int
    loss: float
    lr: float
    train_acc: float
    test_acc: float
    gram_offdiag: float

    def line(self) -> str:
        return (
            f"{self.epoch} {self.loss!r} {self.lr!r} {self.train_acc!r} "
            f"{self.test_acc!r} {self.gram_offdiag!r}"
        )


@export
def write_metrics(path: str | Path, metrics: Iterable[EpochMetrics]) -> None:
    """One ``epoch loss lr train_acc test_acc gram_offdiag`` line per epoch."""
    Path(path).write_text("".join(m.line() + "\n" for m in metrics))


@export
class TrainResult(BaseModel):
    params: ModelParams
    metrics: list[EpochMetrics]

    class Config:
        arbitrary_types_allowed = True


def _log_violations(operator: OperatorTrace, epoch: int) -> None:
    operators = operator.raw if operator.operator is None else [operator.operator]
    for L in operators:
        for violation in laplacian_violations(L, tol=1e-8):
            logger.warning("epoch %d: Laplacian invariant drift: %s", epoch, violation)


def _gram_energy(params: ModelParams) -> float:
    return basis_diagnostics(build_operator(params).basis).offdiag_energy


def _accuracy(params: ModelParams, graphs: list[TrajectoryGraph]) -> float:
    return evaluate(params, graphs).accuracy if graphs else math.nan


@export
def train(
    config: TrainConfig,
    graphs: list[TrajectoryGraph],
    handcrafted: Optional[np.ndarray] = None,
) -> TrainResult:
    train_set, test_set = split_graphs(graphs, "train"), split_graphs(graphs, "test")
    if not train_set:
        raise EmptySplit("the dataset has no training sequences")
    signals, labels = stack_graphs(train_set)
    handcrafted = handcrafted if handcrafted is not None else train_set[0].adjacency
    num_classes = int(max(g.label for g in graphs)) + 1
    model_config = config.model_config(
        n=signals.shape[2], signal_dim=signals.shape[1], num_classes=num_classes
    )

    rng = np.random.default_rng(config.seed)
    params = init_params(model_config, handcrafted, rng, init_noise=config.init_noise)
    state = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    workers = 1 if config.deterministic else config.threads
    logger.info(
        "training %s %s K=%d on %d sequences (%d test), %d classes",
        config.mode.value,
        model_config.laplacian_kind,
        config.K,
        len(train_set),
        len(test_set),
        num_classes,
    )

    lr = config.base_lr
    losses: list[float] = []
    metrics: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            index = order[start : start + config.batch_size]
            try:
                total_loss += _train_step(
                    params, state, signals[index], labels[index], lr, workers
                )
            except (NonFinite, DegenerateSpectrum) as e:
                raise NumericalAbort(str(e), epoch=epoch) from e

        mean_loss = total_loss / len(train_set)
        if not math.isfinite(mean_loss) or mean_loss > DIVERGENCE_LOSS:
            raise NumericalAbort(f"training loss diverged to {mean_loss!r}", epoch=epoch)
        losses.append(mean_loss)

        if config.diagnostics:
            _log_violations(build_operator(params), epoch)
        row = EpochMetrics(
            epoch=epoch,
            loss=mean_loss,
            lr=lr,
            train_acc=_accuracy(params, train_set),
            test_acc=_accuracy(params, test_set),
            gram_offdiag=_gram_energy(params),
        )
        metrics.append(row)
        logger.info(
            "epoch %d loss %.6f lr %.3e train %.4f test %.4f gram %.3e",
            epoch,
            row.loss,
            row.lr,
            row.train_acc,
            row.test_acc,
            row.gram_offdiag,
        )

        if len(losses) >= 3:
            speed_now = abs(losses[-1] - losses[-2])
            speed_prev = abs(losses[-2] - losses[-3])
            lr = lr_update(lr, speed_now, speed_prev)

    return TrainResult(params=params, metrics=metrics)


def _train_step(
    params: ModelParams,
    state: AdamState,
    signals: np.ndarray,
    labels: np.ndarray,
    lr: float,
    workers: Optional[int],
) -> float:
    grads = batch_gradients(params, signals, labels, workers=workers)
    count = grads.count
    step_grads = {
        name: grads.tensors[name] / count for name in params.trainable_names()
    }
    mode = params.config.mode
    if mode == Mode.TLL and params.config.tll_penalty > 0:
        _, penalty_grad = _tll_penalty_gradient(params, build_operator(params))
        step_grads["adjacency"] = step_grads["adjacency"] + penalty_grad
    if mode in (Mode.LEARNED, Mode.TLL):
        step_grads["adjacency"] = project_gradient(params.adjacency, step_grads["adjacency"])

    adam_step(params.trainable(), step_grads, state, lr)
    if mode in (Mode.LEARNED, Mode.TLL):
        np.maximum(params.adjacency, 0.0, out=params.adjacency)
    params.step += 1
    return grads.loss


@export
class AblationRow(BaseModel):
    mode: Mode
    kind: Parametrization
    symmetric: bool
    orthogonal: bool
    K: int
    test_accuracy: float
    sample_accuracy: float


@export
def ablation_grid(
    base_config: TrainConfig,
    graphs: list[TrajectoryGraph],
    Ks: Iterable[int] = (2, 4, 8),
    kinds: Iterable[Parametrization] = tuple(Parametrization),
    modes: Iterable[Mode] = tuple(Mode),
    constraints: Iterable[tuple[bool, bool]] = ((True, True),),
) -> list[AblationRow]:
    """Train every (mode, kind, sym/orth, K) combination and report test accuracy."""
    test_set = split_graphs(graphs, "test")
    if not test_set:
        raise EmptySplit("the ablation grid needs a test split")
    rows = []
    for mode in modes:
        for kind in kinds:
            for symmetric, orthogonal in constraints:
                for K in Ks:
                    config = base_config.copy(
                        update=dict(
                            mode=mode,
                            kind=kind,
                            symmetric=symmetric,
                            orthogonal=orthogonal,
                            K=K,
                        )
                    )
                    try:
                        result = train(config, graphs)
                    except CheblapError as e:
                        logger.warning("%s %s K=%d failed: %s", mode.value, kind.value, K, e)
                        accuracy = sample = math.nan
                    else:
                        report = evaluate(result.params, test_set)
                        accuracy, sample = report.accuracy, report.sample_accuracy
                    rows.append(
                        AblationRow(
                            mode=mode,
                            kind=kind,
                            symmetric=symmetric,
                            orthogonal=orthogonal,
                            K=K,
                            test_accuracy=accuracy,
                            sample_accuracy=sample,
                        )
                    )
    return rows


@export
def format_ablation(rows: Iterable[AblationRow]) -> str:
    lines = ["# mode kind sym orth K test_acc sample_acc"]
    for row in rows:
        lines.append(
            f"{row.mode.value} {row.kind.value} {int(row.symmetric)} {int(row.orthogonal)} "
            f"{row.K} {row.test_accuracy:.4f} {row.sample_accuracy:.4f}"
        )
    return "\n".join(lines) + "\n"
