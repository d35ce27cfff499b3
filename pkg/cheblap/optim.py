"""Adam with lazily created moments, plus the loss-speed learning-rate schedule."""
from __future__ import annotations

import numpy as np
from exports import export
from pydantic import BaseModel, Field

from cheblap.utils.errors import NonFinite, ShapeMismatch

LR_DECAY = 0.99
LR_FLOOR = 1e-6
LR_CEILING = 1e-1


@export
class AdamState(BaseModel):
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = Field(default_factory=dict)
    v: dict[str, np.ndarray] = Field(default_factory=dict)

    class Config:
        arbitrary_types_allowed = True


@export
def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """Update ``params`` in place; every parameter shares the state's timestep."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeMismatch(
                f"{name}: gradient {g.shape} for parameter {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"gradient of {name} holds NaN or Inf")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g**2

        m_hat = state.m[name] / (1.0 - b1**state.step)
        v_hat = state.v[name] / (1.0 - b2**state.step)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(params[name])):
            raise NonFinite(f"{name} diverged at Adam step {state.step}")
    return state


@export
def lr_update(prev_lr: float, loss_speed_now: float, loss_speed_prev: float) -> float:
    """Shrink the rate when the loss changes faster than last epoch, grow it otherwise."""
    if loss_speed_now >= loss_speed_prev:
        lr = prev_lr * LR_DECAY
    else:
        lr = prev_lr / LR_DECAY
    return float(np.clip(lr, LR_FLOOR, LR_CEILING))
