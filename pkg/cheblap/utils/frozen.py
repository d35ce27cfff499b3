from typing import Any

import numpy as np
from pydantic import BaseModel, root_validator


def freeze_array(value: np.ndarray) -> np.ndarray:
    frozen = np.array(value, dtype=float, copy=True)
    frozen.setflags(write=False)
    return frozen


def _freeze(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return freeze_array(value)
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], np.ndarray):
        return tuple(freeze_array(v) for v in value)
    return value


class FrozenArrayModel(BaseModel):
    """Immutable value object whose numpy fields are copied to read-only float arrays."""

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _freeze_arrays(cls, values: dict[str, Any]) -> dict[str, Any]:
        return {name: _freeze(value) for name, value in values.items()}
