"""
Checkpoint Repository Module

This module persists surrogate models as versioned binary checkpoints.

Layout (little-endian):

    magic          4 bytes  b"CDGA"
    version        u16
    arch_length    u32
    architecture   arch_length bytes of UTF-8 JSON
    tensor_count   u32
    tensor_count times:
        name_length u16, name (UTF-8)
        ndim u8, shape u32 * ndim
        data float64 * prod(shape)
    crc32          u32 over every preceding byte

The state dict includes the encoder, deep mean, kernel hyperparameters and the
reward standardization buffer. Deserialization either returns a complete
model or raises; it never hands out a partially loaded one.
"""

import json
import logging
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from app.exceptions import CheckpointError, ScoopingError
from app.models.surrogate import Architecture, SurrogateModel

logger = logging.getLogger(__name__)

MAGIC = b"CDGA"
FORMAT_VERSION = 1


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise CheckpointError(f"Checkpoint truncated at byte {self.offset} (needed {size} more)")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


class CheckpointRepository:
    """
    Repository for surrogate model checkpoints.

    Methods:
        serialize: Model to bytes
        deserialize: Bytes to model
        save: Write a checkpoint file
        load: Read a checkpoint file
    """

    @staticmethod
    def serialize(model: SurrogateModel) -> bytes:
        arch = json.dumps(model.architecture.to_dict(), sort_keys=True).encode("utf-8")
        state = model.state_dict()
        parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(arch)), arch, struct.pack("<I", len(state))]
        for name, tensor in state.items():
            encoded = name.encode("utf-8")
            values = tensor.detach().cpu().to(torch.float64).numpy()
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack(f"<B{values.ndim}I", values.ndim, *values.shape))
            parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @staticmethod
    def deserialize(payload: bytes) -> SurrogateModel:
        """
        Rebuild a model from checkpoint bytes.

        Raises:
            CheckpointError: On empty, truncated, corrupted or foreign-version payloads
        """
        if len(payload) < len(MAGIC) + 4:
            raise CheckpointError("Checkpoint is empty or truncated")
        body, (crc,) = payload[:-4], struct.unpack("<I", payload[-4:])
        if body[:len(MAGIC)] != MAGIC:
            raise CheckpointError("Not a checkpoint file (bad magic)")
        if zlib.crc32(body) != crc:
            raise CheckpointError("Checkpoint checksum mismatch")

        reader = _Reader(body)
        reader.take(len(MAGIC))
        version, arch_length = reader.unpack("<HI")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
        try:
            architecture = Architecture.from_dict(json.loads(reader.take(arch_length).decode("utf-8")))
        except CheckpointError:
            raise
        except (ValueError, TypeError, KeyError, ScoopingError) as e:
            raise CheckpointError(f"Invalid architecture descriptor: {e}")

        (count,) = reader.unpack("<I")
        state = OrderedDict()
        for _ in range(count):
            (name_length,) = reader.unpack("<H")
            name = reader.take(name_length).decode("utf-8", errors="replace")
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            size = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape)
            state[name] = torch.from_numpy(values.astype(np.float64))
        if reader.offset != len(body):
            raise CheckpointError(f"{len(body) - reader.offset} trailing bytes in checkpoint")

        model = SurrogateModel(architecture)
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"Checkpoint does not match its architecture: {e}")
        model.eval()
        return model

    def save(self, model: SurrogateModel, path: Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.serialize(model))
        except OSError as e:
            logger.error(f"Failed to write checkpoint {path}: {e}", exc_info=True)
            raise CheckpointError(f"Cannot write checkpoint {path}: {e}")
        logger.info(f"Saved checkpoint {path}")
        return path

    def load(self, path: Path) -> SurrogateModel:
        try:
            payload = Path(path).read_bytes()
        except OSError as e:
            raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
        model = self.deserialize(payload)
        logger.info(f"Loaded checkpoint {path}")
        return model
