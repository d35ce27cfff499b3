"""Training configuration: ``key = value`` files layered under CLI overrides."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

from exports import export
from pydantic import BaseModel, Extra, ValidationError, root_validator, validator

from cheblap.chebyshev import MAX_ORDER
from cheblap.graph import LaplacianKind, Parametrization
from cheblap.model import Mode, ModelConfig
from cheblap.utils.errors import ConfigError


@export
class TrainConfig(BaseModel):
    epochs: int = 1800
    batch_size: int = 200
    base_lr: float = 1e-2
    # Adam momentum
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    K: int
    kind: Parametrization = Parametrization.NDRW
    symmetric: bool = True
    orthogonal: bool = True
    mode: Mode = Mode.LEARNED
    seed: int = 0
    channels: int = 64
    blocks: int = 2
    activation: Literal["relu", "identity"] = "relu"
    # temporal chunks per trajectory
    chunks: int = 4
    tll_penalty: float = 1e-2
    init_noise: float = 0.01
    reference_joints: tuple[int, int, int] = (1, 3, 6)
    deterministic: bool = False
    threads: Optional[int] = None
    diagnostics: bool = False

    class Config:
        extra = Extra.forbid

    @root_validator(pre=True)
    def _split_symmetric_prefix(cls, values: dict[str, Any]) -> dict[str, Any]:
        """``kind = S-NDRW`` means ``kind = NDRW`` with ``symmetric = 1``; the prefix wins."""
        kind = values.get("kind")
        if not isinstance(kind, str):
            return values
        try:
            parsed = LaplacianKind.parse(kind)
        except ValueError:
            return values
        values = {**values, "kind": parsed.base}
        if parsed.symmetric:
            values["symmetric"] = True
        return values

    @validator("kind", "mode", pre=True)
    def _case_insensitive(cls, value: Any, field) -> Any:
        if isinstance(value, str):
            return value.upper() if field.name == "kind" else value.lower()
        return value

    @validator("reference_joints", pre=True)
    def _split_joints(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(token) for token in value.replace(",", " ").split())
        return value

    @validator("epochs", "batch_size", "K", "channels", "blocks", "chunks")
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be positive")
        return value

    @validator("K")
    def _order_in_range(cls, value: int) -> int:
        if value > MAX_ORDER:
            raise ValueError(f"must not exceed {MAX_ORDER}")
        return value

    @validator("threads")
    def _positive_threads(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("must be positive")
        return value

    @validator("tll_penalty", "init_noise")
    def _nonnegative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be nonnegative")
        return value

    def model_config(self, n: int, signal_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            mode=self.mode,
            kind=self.kind,
            symmetric=self.symmetric,
            orthogonal=self.orthogonal,
            K=self.K,
            blocks=self.blocks,
            channels=self.channels,
            activation=self.activation,
            n=n,
            signal_dim=signal_dim,
            num_classes=num_classes,
            tll_penalty=self.tll_penalty,
        )

    def echo(self) -> dict[str, str]:
        return {key: format_value(value) for key, value in self.dict().items()}


def format_value(value: Any) -> str:
    match value:
        case bool():
            return str(int(value))
        case Mode() | Parametrization():
            return value.value
        case tuple() | list():
            return ",".join(str(v) for v in value)
        case float():
            return repr(value)
        case None:
            return "none"
        case _:
            return str(value)


@export
def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        values[key] = value
    return values


@export
def make_config(*layers: dict[str, Any]) -> TrainConfig:
    """Merge layers left to right (later wins) and validate."""
    merged: dict[str, Any] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    for key, value in list(merged.items()):
        if isinstance(value, str) and value.lower() == "none":
            merged[key] = None
    try:
        return TrainConfig(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(loc) for loc in error['loc'])}: {error['msg']}"
            for error in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from None


@export
def load_config(path: Optional[str | Path], overrides: dict[str, Any]) -> TrainConfig:
    file_values = read_config_file(path) if path is not None else {}
    return make_config(file_values, overrides)
