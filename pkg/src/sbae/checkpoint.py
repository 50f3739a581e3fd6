"""Binary checkpoint format.

Layout, little-endian throughout::

    b"SBAE"  uint32 version  uint64 header_len  header (UTF-8 JSON)
    repeated until EOF:
        uint16 name_len  name (UTF-8)  uint8 rank  rank x uint64 dims  float32 data

The header holds the model config and the number of optimizer updates.
Tensors appear in the model's parameter order.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import ValidationError

from .config import ModelConfig
from .corpus import atomic_write_bytes
from .errors import CheckpointError
from .model import Autoencoder

logger = logging.getLogger(__name__)

MAGIC = b"SBAE"
FORMAT_VERSION = 1


def serialize(model: Autoencoder, updates: int = 0) -> bytes:
    header = json.dumps(
        {"model": model.config.model_dump(mode="json"), "updates": updates},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header]
    for name, param in model.named_parameters():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{param.ndim}Q", param.ndim, *param.shape))
        parts.append(np.ascontiguousarray(param.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Autoencoder, path: Union[str, Path], updates: int = 0) -> Path:
    """Write atomically; a failed write leaves no file behind."""
    path = Path(path)
    atomic_write_bytes(path, serialize(model, updates))
    logger.info("checkpoint written to %s (%d updates)", path, updates)
    return path


class _Reader:
    def __init__(self, payload: bytes, source: str) -> None:
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointError(f"{self.source}: truncated at byte {self.offset}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.payload)


def deserialize(payload: bytes, source: str = "checkpoint") -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Header dict and name-to-array mapping, in file order."""
    reader = _Reader(payload, source)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: bad magic, not a checkpoint")
    version, header_len = reader.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    while not reader.exhausted:
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}Q")
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape)
    return header, tensors


def read_checkpoint(path: Union[str, Path]) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return deserialize(payload, str(path))


def load_checkpoint(path: Union[str, Path], config: Optional[ModelConfig] = None) -> tuple[Autoencoder, int]:
    """Rebuild the model stored at ``path``; returns it with the stored update count.

    ``config``, when given, must describe the same architecture as the file.
    """
    header, tensors = read_checkpoint(path)
    try:
        stored = ModelConfig.model_validate(header["model"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError(f"{path}: header has no valid model config") from exc
    if config is not None and config != stored:
        raise CheckpointError(f"{path}: stored config {stored} differs from requested {config}")

    model = Autoencoder(stored, materialize=False)
    expected = dict(model.named_parameters())
    if list(tensors) != list(expected):
        missing = sorted(set(expected) - set(tensors))
        unexpected = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"{path}: parameter mismatch (missing {missing}, unexpected {unexpected})")
    for name, param in expected.items():
        array = tensors[name]
        if array.shape != param.shape:
            raise CheckpointError(f"{path}: {name} has shape {array.shape}, model expects {param.shape}")
        param.data = array.astype(param.dtype)
    model.materialized = True
    return model, int(header.get("updates", 0))
