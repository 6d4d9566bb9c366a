"""
Plain-text checkpoint store.

Layout (LF line endings)::

    sgcn-checkpoint
    version: 1
    epoch: <int>
    config: <ModelConfig as JSON>
    tensors: <count>
    <name> <d0>x<d1>...          # shape table, one line per tensor
    ...
    <name> <v0> <v1> ...         # row-major payload, %.17g, same order
    ...

Writes go to a temp file in the target directory and are renamed into place.
"""
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.errors import CheckpointError
from app.models.weights import ModelWeights, init_weights
from app.schemas.all_schemas import ModelConfig

MAGIC = "sgcn-checkpoint"
VERSION = 1


@dataclass
class LoadedCheckpoint:
    weights: ModelWeights
    config: ModelConfig
    epoch: int


def _format_shape(shape: Tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape)


def dumps_checkpoint(weights: ModelWeights, config: ModelConfig, epoch: int = 0) -> str:
    params = weights.named_parameters()
    lines = [
        MAGIC,
        f"version: {VERSION}",
        f"epoch: {epoch}",
        f"config: {config.model_dump_json()}",
        f"tensors: {len(params)}",
    ]
    lines += [f"{name} {_format_shape(p.shape)}" for name, p in params.items()]
    for name, p in params.items():
        values = " ".join(format(float(v), ".17g") for v in p.data.ravel())
        lines.append(f"{name} {values}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path, weights: ModelWeights, config: ModelConfig, epoch: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps_checkpoint(weights, config, epoch)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def _header_value(lines: List[str], index: int, key: str, path: Path) -> str:
    prefix = f"{key}:"
    if index >= len(lines) or not lines[index].startswith(prefix):
        raise CheckpointError(f"{path}: checkpoint header is missing the '{key}' field")
    return lines[index][len(prefix):].strip()


def _shapes_of(weights: ModelWeights) -> Dict[str, Tuple[int, ...]]:
    return {name: p.shape for name, p in weights.named_parameters().items()}


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> LoadedCheckpoint:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc

    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic line)")
    raw_version = _header_value(lines, 1, "version", path)
    try:
        version = int(raw_version)
    except ValueError:
        raise CheckpointError(f"{path}: checkpoint header has an invalid 'version' field: {raw_version!r}") from None
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint 'version' {version}, expected {VERSION}")

    try:
        epoch = int(_header_value(lines, 2, "epoch", path))
        config = ModelConfig.model_validate_json(_header_value(lines, 3, "config", path))
        count = int(_header_value(lines, 4, "tensors", path))
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint header: {exc}") from exc

    table_start, payload_start = 5, 5 + count
    if len(lines) < payload_start + count:
        raise CheckpointError(f"{path}: truncated checkpoint, expected {count} tensors")

    weights = init_weights(config)
    params = weights.named_parameters()
    declared = {}
    for line in lines[table_start:payload_start]:
        name, _, shape_text = line.partition(" ")
        try:
            declared[name] = tuple(int(d) for d in shape_text.split("x"))
        except ValueError:
            raise CheckpointError(f"{path}: bad shape entry {line!r}") from None
    if declared != _shapes_of(weights):
        raise CheckpointError(f"{path}: shape table does not match the architecture in its own config")

    for line in lines[payload_start:payload_start + count]:
        name, _, payload = line.partition(" ")
        if name not in params:
            raise CheckpointError(f"{path}: unknown tensor {name!r}")
        target = params[name]
        try:
            values = np.array(payload.split(), dtype=np.float64)
        except ValueError:
            raise CheckpointError(f"{path}: tensor {name!r} has a non-numeric payload") from None
        if values.size != target.size:
            raise CheckpointError(f"{path}: tensor {name!r} has {values.size} values, shape needs {target.size}")
        target.data[...] = values.reshape(target.shape)

    if expected is not None:
        wanted = _shapes_of(init_weights(expected))
        for name, shape in declared.items():
            if wanted.get(name) != shape:
                raise CheckpointError(
                    f"{path}: parameter {name} has shape {shape} but the run config "
                    f"(t_obs={expected.t_obs}, t_pred={expected.t_pred}, embed_dim={expected.embed_dim}, "
                    f"asym_layers={expected.asym_layers}, tcn_layers={expected.tcn_layers}) expects {wanted.get(name)}"
                )
        if set(wanted) != set(declared):
            raise CheckpointError(f"{path}: checkpoint parameters do not match the run config architecture")

    return LoadedCheckpoint(weights=weights, config=config, epoch=epoch)
