"""Plain-text checkpoints.

::

    cheblap-checkpoint 1
    config <key> = <value>        one line per TrainConfig field
    model <key> = <value>         n, signal_dim, num_classes, step
    tensor <name> <rows> <cols>   followed by <rows> lines of <cols> values
    end

Three-dimensional tensors are stored one slice at a time as ``<name>:<k>``.
Values are written with ``repr`` so a reload is bit-exact.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from exports import export
from pydantic import BaseModel

from cheblap.config import TrainConfig, make_config
from cheblap.matrix_io import format_row, parse_floats, read_lines
from cheblap.model import ModelParams
from cheblap.utils.errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

MAGIC = "cheblap-checkpoint"
VERSION = 1


@export
class Checkpoint(BaseModel):
    config: TrainConfig
    params: ModelParams

    class Config:
        arbitrary_types_allowed = True


def _tensor_blocks(name: str, tensor: np.ndarray) -> list[str]:
    tensor = np.asarray(tensor, dtype=float)
    if tensor.ndim == 3:
        return [line for k, part in enumerate(tensor) for line in _tensor_blocks(f"{name}:{k}", part)]
    tensor = np.atleast_2d(tensor)
    rows, cols = tensor.shape
    return [f"tensor {name} {rows} {cols}"] + [format_row(row) for row in tensor]


@export
def save_checkpoint(path: str | Path, params: ModelParams, config: TrainConfig) -> None:
    lines = [f"{MAGIC} {VERSION}"]
    lines += [f"config {key} = {value}" for key, value in config.echo().items()]
    model = params.config
    lines += [
        f"model n = {model.n}",
        f"model signal_dim = {model.signal_dim}",
        f"model num_classes = {model.num_classes}",
        f"model step = {params.step}",
    ]
    for name, tensor in params.named_tensors().items():
        lines += _tensor_blocks(name, tensor)
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def _key_value(text: str, path: str, line_no: int) -> tuple[str, str]:
    if "=" not in text:
        raise ParseError(f"expected 'key = value', got {text!r}", path, line_no)
    key, value = (part.strip() for part in text.split("=", 1))
    return key, value


@export
def load_checkpoint(path: str | Path) -> Checkpoint:
    path_str = str(path)
    lines = read_lines(path)
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise ParseError(f"not a {MAGIC} {VERSION} file", path_str, 1)

    config_values: dict[str, str] = {}
    model_values: dict[str, int] = {}
    tensors: dict[str, np.ndarray] = {}
    position, ended = 1, False
    while position < len(lines):
        line_no, line = position + 1, lines[position].strip()
        position += 1
        if not line:
            continue
        tag, _, rest = line.partition(" ")
        match tag:
            case "config":
                key, value = _key_value(rest, path_str, line_no)
                config_values[key] = value
            case "model":
                key, value = _key_value(rest, path_str, line_no)
                try:
                    model_values[key] = int(value)
                except ValueError:
                    raise ParseError(f"{key} must be an integer", path_str, line_no) from None
            case "tensor":
                try:
                    name, rows, cols = rest.split()
                    rows, cols = int(rows), int(cols)
                except ValueError:
                    raise ParseError(f"bad tensor header {line!r}", path_str, line_no) from None
                if position + rows > len(lines):
                    raise ParseError(f"tensor {name} is truncated", path_str, line_no)
                values = [
                    parse_floats(lines[position + r], path_str, position + r + 1)
                    for r in range(rows)
                ]
                if any(len(row) != cols for row in values):
                    raise ParseError(f"tensor {name} has ragged rows", path_str, line_no)
                tensors[name] = np.array(values, dtype=float).reshape(rows, cols)
                position += rows
            case "end":
                ended = True
                break
            case _:
                raise ParseError(f"unexpected line {line!r}", path_str, line_no)
    if not ended:
        raise ParseError("checkpoint ends before the 'end' marker", path_str, len(lines))

    try:
        config = make_config(config_values)
    except ConfigError as e:
        raise ParseError(str(e), path_str) from None
    for key in ("n", "signal_dim", "num_classes", "step"):
        if key not in model_values:
            raise ParseError(f"missing model {key}", path_str)
    model_config = config.model_config(
        n=model_values["n"],
        signal_dim=model_values["signal_dim"],
        num_classes=model_values["num_classes"],
    )
    tensors = _stack_slices(tensors)

    try:
        params = ModelParams(
            config=model_config,
            theta=[tensors[f"theta.{b}"] for b in range(model_config.blocks)],
            classifier_w=tensors["classifier.w"],
            classifier_b=tensors["classifier.b"],
            adjacency=tensors["adjacency"],
            handcrafted=tensors["handcrafted"],
            ml_logits=tensors.get("ml_logits"),
            step=model_values["step"],
        )
    except KeyError as e:
        raise ParseError(f"missing tensor {e.args[0]}", path_str) from None
    logger.debug("loaded checkpoint %s at step %d", path_str, params.step)
    return Checkpoint(config=config, params=params)


def _stack_slices(tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Reassemble ``name:k`` slices into (K, rows, cols) tensors."""
    stacked: dict[str, dict[int, np.ndarray]] = {}
    merged = {}
    for name, tensor in tensors.items():
        base, sep, k = name.partition(":")
        if sep:
            stacked.setdefault(base, {})[int(k)] = tensor
        else:
            merged[name] = tensor
    for base, parts in stacked.items():
        merged[base] = np.stack([parts[k] for k in sorted(parts)])
    return merged
