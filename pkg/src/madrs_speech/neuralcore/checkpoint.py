"""Versioned binary checkpoints: named float32 tensors plus a text header.

Layout, little-endian throughout:

    magic "NNCK" | u32 version | u32 header_len | header (UTF-8 key = value
    lines, currently the optimizer config) | u32 tensor_count | per tensor:
    u16 name_len, name, u32 ndim, u32 dims..., float32 payload (C order)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .nn import ParamTensor
from .optim import OptimizerConfig

MAGIC = b"NNCK"
VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed."""


def _header_text(cfg: OptimizerConfig) -> str:
    lines = [
        f"learning_rate = {cfg.learning_rate!r}",
        f"weight_decay = {cfg.weight_decay!r}",
        f"beta1 = {cfg.beta1!r}",
        f"beta2 = {cfg.beta2!r}",
        f"epsilon = {cfg.epsilon!r}",
    ]
    return "\n".join(lines) + "\n"


def parse_header(text: str) -> OptimizerConfig:
    fields: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, value = line.split("=", 1)
        fields[key.strip()] = float(value.strip())
    return OptimizerConfig(**fields)


def save_checkpoint(
    path: str | Path, params: Iterable[ParamTensor], cfg: OptimizerConfig
) -> None:
    path = Path(path)
    header = _header_text(cfg).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header]
    params = list(params)
    chunks.append(struct.pack("<I", len(params)))
    for param in params:
        name = param.name.encode("utf-8")
        value = np.ascontiguousarray(param.value, dtype="<f4")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], OptimizerConfig]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    offset = 4
    (version,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = data[offset:offset + header_len].decode("utf-8")
    offset += header_len
    (n_tensors,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(data[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return tensors, parse_header(header)


def restore_params(params: Iterable[ParamTensor], tensors: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into matching ParamTensors by name."""
    for param in params:
        if param.name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {param.name!r}")
        stored = tensors[param.name]
        if stored.shape != param.value.shape:
            raise CheckpointError(
                f"tensor {param.name!r}: checkpoint shape {stored.shape} vs "
                f"model shape {param.value.shape}"
            )
        param.value[...] = stored.astype(param.value.dtype)
