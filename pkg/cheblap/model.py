"""Chebyshev convolutional network with a shared, learnable Laplacian.

Each block computes ``sum_k T_k(L) psi^T Theta_k`` followed by the
configured activation, except the last block which stays linear. Blocks share
one operator, every block output is average-pooled over nodes,
and the concatenated pooled vectors feed a softmax classifier.

All arrays carry an optional leading batch axis; gradients are summed over it.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Literal, Optional

import numpy as np
from exports import export
from pydantic import BaseModel, validator

from cheblap.chebyshev import ChebyshevBasis, aggregate, derivative_basis, forward_basis
from cheblap.graph import (
    LaplacianKind,
    LaplacianOperator,
    Parametrization,
    build_laplacian,
    check_finite,
    effective_adjacency,
    rescale_spectrum,
)
from cheblap.laplacian_grad import (
    BasisGradients,
    apply_parametrization_jacobian,
    grad_wrt_laplacian,
)
from cheblap.utils.dynamic_default import dynamic_default
from cheblap.utils.errors import InvalidLabel, MismatchedTrace, ShapeMismatch
from cheblap.utils.frozen import FrozenArrayModel

logger = logging.getLogger(__name__)

THREADS_ENV = "CHEBLAP_THREADS"

PLAIN_KINDS: tuple[LaplacianKind, ...] = tuple(
    LaplacianKind(base=base) for base in Parametrization
)


@export
class Mode(str, Enum):
    HL = "hl"
    ML = "ml"
    TLL = "tll"
    LEARNED = "learned"


@export
class ModelConfig(BaseModel):
    mode: Mode = Mode.LEARNED
    kind: Parametrization = Parametrization.NDRW
    symmetric: bool = True
    orthogonal: bool = True
    K: int
    blocks: int = 2
    channels: int = 64
    # nonlinearity of every block but the last
    activation: Literal["relu", "identity"] = "relu"
    n: int
    signal_dim: int
    num_classes: int
    tll_penalty: float = 1e-2

    @validator("K", "blocks", "channels", "n", "signal_dim", "num_classes")
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be positive")
        return value

    @property
    def laplacian_kind(self) -> LaplacianKind:
        return LaplacianKind(base=self.kind, symmetric=self.symmetric)

    @property
    def feature_dim(self) -> int:
        return self.channels * self.blocks


@export
class ModelParams(BaseModel):
    """Trainable tensors; the optimizer updates them in place between batches."""

    config: ModelConfig
    # per block, (K, s_in, C)
    theta: list[np.ndarray]
    # (F, num_classes) and (1, num_classes)
    classifier_w: np.ndarray
    classifier_b: np.ndarray
    # (n, n); (K, n, n) in TLL mode
    adjacency: np.ndarray
    # frozen input graph
    handcrafted: np.ndarray
    # (1, number of plain kinds) in ML mode
    ml_logits: Optional[np.ndarray] = None
    # bumped by the optimizer; traces remember the step they were taken at
    step: int = 0

    class Config:
        arbitrary_types_allowed = True

    def named_tensors(self) -> dict[str, np.ndarray]:
        tensors = {f"theta.{b}": theta for b, theta in enumerate(self.theta)}
        tensors["classifier.w"] = self.classifier_w
        tensors["classifier.b"] = self.classifier_b
        tensors["adjacency"] = self.adjacency
        tensors["handcrafted"] = self.handcrafted
        if self.ml_logits is not None:
            tensors["ml_logits"] = self.ml_logits
        return tensors

    def trainable_names(self) -> list[str]:
        names = [f"theta.{b}" for b in range(len(self.theta))]
        names += ["classifier.w", "classifier.b"]
        match self.config.mode:
            case Mode.LEARNED | Mode.TLL:
                names.append("adjacency")
            case Mode.ML:
                names.append("ml_logits")
        return names

    def trainable(self) -> dict[str, np.ndarray]:
        tensors = self.named_tensors()
        return {name: tensors[name] for name in self.trainable_names()}

    def effective_adjacency(self) -> np.ndarray:
        """The adjacency the Laplacian is built on (A + A^T for symmetric kinds)."""
        return effective_adjacency(self.adjacency, self.config.laplacian_kind)


@export
def init_params(
    config: ModelConfig,
    handcrafted: np.ndarray,
    rng: np.random.Generator,
    init_noise: float = 0.01,
) -> ModelParams:
    handcrafted = np.asarray(handcrafted, dtype=float)
    if handcrafted.shape != (config.n, config.n):
        raise ShapeMismatch(f"handcrafted adjacency {handcrafted.shape} for n = {config.n}")
    if config.K > min(config.n, config.signal_dim):
        logger.warning(
            "K = %d exceeds min(n, s) = %d; the Chebyshev terms cannot all be independent",
            config.K,
            min(config.n, config.signal_dim),
        )

    theta = []
    for b in range(config.blocks):
        s_in = config.signal_dim if b == 0 else config.channels
        bound = 1.0 / np.sqrt(config.K * s_in)
        theta.append(rng.uniform(-bound, bound, size=(config.K, s_in, config.channels)))
    bound = 1.0 / np.sqrt(config.feature_dim)
    classifier_w = rng.uniform(-bound, bound, size=(config.feature_dim, config.num_classes))
    classifier_b = rng.uniform(-bound, bound, size=(1, config.num_classes))

    # A + A^T reproduces the handcrafted graph for symmetric kinds
    base = handcrafted / 2.0 if config.symmetric else handcrafted.copy()
    ml_logits = None
    match config.mode:
        case Mode.HL | Mode.ML:
            adjacency = base
            if config.mode == Mode.ML:
                ml_logits = np.zeros((1, len(PLAIN_KINDS)))
        case Mode.LEARNED:
            adjacency = base + rng.uniform(0.0, init_noise, size=base.shape)
        case Mode.TLL:
            adjacency = base[None] + rng.uniform(
                0.0, init_noise, size=(config.K,) + base.shape
            )

    return ModelParams(
        config=config,
        theta=theta,
        classifier_w=classifier_w,
        classifier_b=classifier_b,
        adjacency=adjacency,
        handcrafted=handcrafted,
        ml_logits=ml_logits,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@export
class OperatorTrace(FrozenArrayModel):
    """The shared operator of one forward pass and what its backward needs."""

    basis: ChebyshevBasis
    # unrescaled operators: one, or K in TLL mode
    raw: list[LaplacianOperator]
    # the operator the basis is evaluated on (None in TLL mode)
    operator: Optional[LaplacianOperator] = None
    # ML mode: the plain handcrafted Laplacians and their mixture weights
    components: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None


@export
def build_operator(params: ModelParams) -> OperatorTrace:
    """Laplacian(s) and Chebyshev basis; recomputed every forward as A changes."""
    config = params.config
    kind = config.laplacian_kind
    match config.mode:
        case Mode.TLL:
            raw = [build_laplacian(A_k, kind) for A_k in params.adjacency]
            terms = np.stack([L.matrix for L in raw])
            basis = ChebyshevBasis(terms=terms, recursion="independent")
            return OperatorTrace(basis=basis, raw=raw)
        case Mode.ML:
            handcrafted = params.handcrafted
            components = np.stack([build_laplacian(handcrafted, k).matrix for k in PLAIN_KINDS])
            weights = softmax(params.ml_logits[0])
            L_raw = LaplacianOperator(matrix=np.einsum("m,mij->ij", weights, components))
        case _:
            components = weights = None
            L_raw = build_laplacian(params.adjacency, kind)

    L = rescale_spectrum(L_raw) if config.orthogonal else L_raw
    basis = derivative_basis(L, forward_basis(L, config.K))
    return OperatorTrace(
        basis=basis, raw=[L_raw], operator=L, components=components, weights=weights
    )


@export
class BlockTrace(FrozenArrayModel):
    psi: np.ndarray
    aggregates: np.ndarray
    pre: np.ndarray
    out: np.ndarray
    theta: np.ndarray
    terms: np.ndarray
    activation: str


def _as_batch(psi: np.ndarray) -> tuple[np.ndarray, bool]:
    psi = np.asarray(psi, dtype=float)
    return (psi[None], True) if psi.ndim == 2 else (psi, False)


@export
def conv_block_forward(
    psi: np.ndarray, basis: ChebyshevBasis, theta: np.ndarray, activation: str = "relu"
) -> tuple[np.ndarray, BlockTrace]:
    """(n, C) features of an (s, n) signal, or (B, n, C) for a (B, s, n) batch."""
    batch, single = _as_batch(psi)
    theta = np.asarray(theta, dtype=float)
    if theta.shape[:2] != (basis.order, batch.shape[1]):
        raise ShapeMismatch(
            f"filters {theta.shape} do not fit K = {basis.order}, s = {batch.shape[1]}"
        )
    aggregates = aggregate(basis, batch)
    pre = np.einsum("bkns,ksc->bnc", aggregates, theta)
    out = np.maximum(pre, 0.0) if activation == "relu" else pre
    trace = BlockTrace(
        psi=batch,
        aggregates=aggregates,
        pre=pre,
        out=out,
        theta=theta,
        terms=basis.terms,
        activation=activation,
    )
    return (out[0] if single else out), trace


@export
def conv_block_backward(
    trace: BlockTrace, grad_out: np.ndarray
) -> tuple[np.ndarray, BasisGradients, np.ndarray]:
    """(grad_theta, nabla, grad_psi), each summed over the batch."""
    grad_out = np.asarray(grad_out, dtype=float)
    single = grad_out.ndim == 2
    if single:
        grad_out = grad_out[None]
    if grad_out.shape != trace.pre.shape:
        raise MismatchedTrace(f"gradient {grad_out.shape} for features {trace.pre.shape}")

    g_pre = grad_out * (trace.pre > 0.0) if trace.activation == "relu" else grad_out
    X = np.swapaxes(trace.psi, -1, -2)
    grad_theta = np.einsum("bkns,bnc->ksc", trace.aggregates, g_pre)
    filtered = np.einsum("bns,ksc->bknc", X, trace.theta)
    nabla = np.einsum("bic,bkjc->kij", g_pre, filtered)
    back = np.einsum("bjc,ksc->bkjs", g_pre, trace.theta)
    grad_X = np.einsum("kji,bkjs->bis", trace.terms, back)
    grad_psi = np.swapaxes(grad_X, -1, -2)
    return grad_theta, BasisGradients(nabla=nabla), (grad_psi[0] if single else grad_psi)


@export
def global_average_pool(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape[-2] < 1:
        raise ShapeMismatch("cannot pool an empty node set")
    return features.mean(axis=-2)


@export
class ClassifierGradients(BaseModel):
    w: np.ndarray
    b: np.ndarray
    pooled: np.ndarray

    class Config:
        arbitrary_types_allowed = True


@export
def classify_and_loss(
    pooled: np.ndarray, params: ModelParams, label: int | np.ndarray
) -> tuple[float, np.ndarray, ClassifierGradients]:
    """Summed cross entropy, probabilities and closed-form softmax gradients."""
    pooled = np.asarray(pooled, dtype=float)
    single = pooled.ndim == 1
    pooled = np.atleast_2d(pooled)
    labels = np.atleast_1d(np.asarray(label))
    num_classes = params.config.num_classes
    if labels.shape[0] != pooled.shape[0]:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {pooled.shape[0]} samples")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise InvalidLabel(f"labels must lie in [0, {num_classes}), got {labels.tolist()}")

    logits = pooled @ params.classifier_w + params.classifier_b
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(labels.shape[0])
    loss = float(np.sum(log_norm - shifted[rows, labels]))
    probs = softmax(logits)

    g_logits = probs.copy()
    g_logits[rows, labels] -= 1.0
    grads = ClassifierGradients(
        w=pooled.T @ g_logits,
        b=g_logits.sum(axis=0, keepdims=True),
        pooled=g_logits @ params.classifier_w.T,
    )
    if single:
        return loss, probs[0], ClassifierGradients(w=grads.w, b=grads.b, pooled=grads.pooled[0])
    return loss, probs, grads


@export
class ForwardTrace(FrozenArrayModel):
    operator: OperatorTrace
    blocks: list[BlockTrace]
    pooled: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    param_step: int


@export
def model_forward(
    params: ModelParams, signals: np.ndarray, operator: Optional[OperatorTrace] = None
) -> ForwardTrace:
    """Forward pass over an (s, n) signal or a (B, s, n) batch.

    A single signal yields unbatched pooled, logits and probabilities; block
    traces always keep the batch axis.
    """
    batch, single = _as_batch(signals)
    config = params.config
    if batch.shape[1:] != (config.signal_dim, config.n):
        raise ShapeMismatch(
            f"signals {batch.shape[1:]} do not match (s, n) = ({config.signal_dim}, {config.n})"
        )
    operator = operator if operator is not None else build_operator(params)

    psi, traces, pooled = batch, [], []
    last = len(params.theta) - 1
    for b, theta in enumerate(params.theta):
        # the last block feeds the pooling unactivated
        activation = config.activation if b < last else "identity"
        features, trace = conv_block_forward(psi, operator.basis, theta, activation)
        traces.append(trace)
        pooled.append(global_average_pool(features))
        psi = np.swapaxes(features, -1, -2)
    pooled = np.concatenate(pooled, axis=-1)
    logits = pooled @ params.classifier_w + params.classifier_b
    if single:
        pooled, logits = pooled[0], logits[0]
    return ForwardTrace(
        operator=operator,
        blocks=traces,
        pooled=pooled,
        logits=logits,
        probabilities=softmax(logits),
        param_step=params.step,
    )


@export
class Gradients(BaseModel):
    """Loss and gradients summed over the samples of one or more batches."""

    loss: float
    count: int
    tensors: dict[str, np.ndarray]
    nabla: Optional[np.ndarray] = None

    class Config:
        arbitrary_types_allowed = True

    def __add__(self, other: Gradients) -> Gradients:
        nabla = None
        if self.nabla is not None:
            nabla = self.nabla + other.nabla
        return Gradients(
            loss=self.loss + other.loss,
            count=self.count + other.count,
            tensors={name: g + other.tensors[name] for name, g in self.tensors.items()},
            nabla=nabla,
        )


def backward_to_basis(
    params: ModelParams, trace: ForwardTrace, labels: np.ndarray
) -> Gradients:
    """Filter and classifier gradients plus the basis gradients summed over blocks."""
    if trace.param_step != params.step or len(trace.blocks) != len(params.theta):
        raise MismatchedTrace("trace was taken with different parameters")
    pooled = np.atleast_2d(trace.pooled)
    loss, _, cls_grads = classify_and_loss(pooled, params, np.atleast_1d(labels))

    tensors = {"classifier.w": cls_grads.w, "classifier.b": cls_grads.b}
    C = params.config.channels
    nabla = np.zeros_like(trace.operator.basis.terms)
    grad_next = None
    for b in reversed(range(len(trace.blocks))):
        block = trace.blocks[b]
        n = block.out.shape[-2]
        grad_out = np.repeat(cls_grads.pooled[:, None, b * C : (b + 1) * C], n, axis=1) / n
        if grad_next is not None:
            grad_out = grad_out + np.swapaxes(grad_next, -1, -2)
        grad_theta, basis_grads, grad_psi = conv_block_backward(block, grad_out)
        tensors[f"theta.{b}"] = grad_theta
        nabla += basis_grads.nabla
        grad_next = grad_psi

    return Gradients(
        loss=loss, count=pooled.shape[0], tensors=tensors, nabla=nabla
    )


def operator_backward(
    params: ModelParams, operator: OperatorTrace, nabla: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of the operator's parameters from dLoss/dT_k."""
    config = params.config
    kind = config.laplacian_kind
    match config.mode:
        case Mode.HL:
            return {"adjacency": np.zeros_like(params.adjacency)}
        case Mode.TLL:
            grads = [
                apply_parametrization_jacobian(kind, A_k, L_k, nabla[k])
                for k, (A_k, L_k) in enumerate(zip(params.adjacency, operator.raw))
            ]
            return {"adjacency": np.stack(grads)}

    grad_L = grad_wrt_laplacian(nabla, operator.basis) * operator.operator.scale
    if config.mode == Mode.ML:
        w = operator.weights
        grad_w = np.einsum("mij,ij->m", operator.components, grad_L)
        return {"ml_logits": (w * (grad_w - w @ grad_w))[None]}
    return {
        "adjacency": apply_parametrization_jacobian(
            kind, params.adjacency, operator.raw[0], grad_L
        )
    }


@export
def model_backward(
    params: ModelParams, trace: ForwardTrace, labels: int | np.ndarray
) -> Gradients:
    """Summed loss and the full gradient bundle, adjacency included."""
    grads = backward_to_basis(params, trace, np.atleast_1d(labels))
    grads.tensors.update(operator_backward(params, trace.operator, grads.nabla))
    return grads


def worker_count() -> int:
    return max(1, int(os.environ.get(THREADS_ENV, "1")))


@export
@dynamic_default("workers", worker_count)
def batch_gradients(
    params: ModelParams,
    signals: np.ndarray,
    labels: np.ndarray,
    *,
    workers: Optional[int] = None,
) -> Gradients:
    """Summed loss and gradients of a batch.

    Shards run on up to ``workers`` threads against read-only parameters; their
    partial sums are reduced in shard order before a single backward pass
    through the operator.
    """
    signals = np.asarray(signals, dtype=float)
    labels = np.asarray(labels)
    operator = build_operator(params)

    def shard_gradients(index: np.ndarray) -> Gradients:
        trace = model_forward(params, signals[index], operator)
        return backward_to_basis(params, trace, labels[index])

    shards = np.array_split(np.arange(len(labels)), min(workers, len(labels)))
    if len(shards) == 1:
        partials = [shard_gradients(shards[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            partials = list(pool.map(shard_gradients, shards))

    total = partials[0]
    for partial in partials[1:]:
        total = total + partial
    check_finite(total.nabla, "basis gradients")
    total.tensors.update(operator_backward(params, operator, total.nabla))
    return total


@export
def predict(params: ModelParams, signals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and class probabilities for a (B, s, n) batch."""
    trace = model_forward(params, signals)
    probabilities = np.atleast_2d(trace.probabilities)
    return probabilities.argmax(axis=-1), probabilities
