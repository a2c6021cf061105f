"""
Checkpoint container.

Layout (little-endian):

    magic      8 bytes  b'SRTLCKPT'
    version    uint32   1
    header     uint32 length + UTF-8 JSON {"model": {...}, "meta": {...}}
    count      uint32   number of parameter blobs
    blob       uint16 name length, name, uint8 ndim, uint32 dims..., float64 data
    checksum   32 bytes SHA-256 of everything above
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional
import hashlib
import json
import logging
import struct

import numpy as np

from apps.autodiff.tensor import Tensor, parameter
from apps.core.exceptions import ContractError

from .config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b'SRTLCKPT'
VERSION = 1
DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    """Loaded checkpoint."""
    config: ModelConfig
    params: Dict[str, Tensor]
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(config: ModelConfig, params: Dict[str, Tensor], meta: Optional[Dict[str, Any]] = None) -> bytes:
    header = json.dumps({'model': config.to_dict(), 'meta': meta or {}}, sort_keys=True).encode('utf-8')
    chunks = [MAGIC, struct.pack('<I', VERSION), struct.pack('<I', len(header)), header, struct.pack('<I', len(params))]
    for name, tensor in params.items():
        encoded = name.encode('utf-8')
        data = np.ascontiguousarray(tensor.data, dtype='<f8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', data.ndim))
        chunks.append(struct.pack(f'<{data.ndim}I', *data.shape))
        chunks.append(data.tobytes())
    body = b''.join(chunks)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise ContractError("checkpoint is truncated")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes) -> Checkpoint:
    if len(payload) < len(MAGIC) + DIGEST_SIZE or payload[:len(MAGIC)] != MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    body, digest = payload[:-DIGEST_SIZE], payload[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ContractError("checkpoint checksum mismatch")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    (header_size,) = reader.unpack('<I')
    header = json.loads(reader.take(header_size).decode('utf-8'))
    (count,) = reader.unpack('<I')

    params = {}
    for _ in range(count):
        (name_size,) = reader.unpack('<H')
        name = reader.take(name_size).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * size), dtype='<f8').astype(np.float64).reshape(shape)
        params[name] = parameter(data, name)
    return Checkpoint(ModelConfig.from_dict(header['model']), params, header.get('meta', {}))


def save_checkpoint(path, config: ModelConfig, params: Dict[str, Tensor], meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(config, params, meta)
    path.write_bytes(payload)
    logger.info(f"Saved checkpoint {path} ({len(params)} tensors, {len(payload)} bytes)")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    checkpoint = decode_checkpoint(path.read_bytes())
    logger.debug(f"Loaded checkpoint {path} with {len(checkpoint.params)} tensors")
    return checkpoint
