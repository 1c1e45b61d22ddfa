"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PDANCKPT"  u32 version
    u32 n + n bytes   canonical NetworkConfig JSON
    u32 n + n bytes   metadata JSON (training state; "{}" for plain models)
    u32 count
    count x [u16 n + name, u8 rank, rank x u32 extent, float32 data]
    32-byte SHA-256 of every preceding byte

Tensors are parameters in graph order, then batch-norm running statistics,
then any extra tensors (optimizer moments).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ModelGraph, NetworkConfig

MAGIC = b"PDANCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: NetworkConfig
    tensors: OrderedDict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(model: ModelGraph, path: str | Path, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = [(n, t.data) for n, t in model.params.items()]
    tensors += list(model.buffers().items())
    tensors += list((extra or {}).items())
    cfg = model.config.canonical_json().encode()
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(meta_raw)), meta_raw,
             struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(n, a) for n, a in tensors]
    body = b"".join(parts)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)


def read_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + 32 or not raw.startswith(MAGIC):
        raise IntegrityError(f"{path}: not a checkpoint (bad magic or truncated)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, body, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    try:
        (n,) = take("<I")
        config = NetworkConfig.from_dict(json.loads(body[pos:pos + n]))
        pos += n
        (n,) = take("<I")
        meta = json.loads(body[pos:pos + n])
        pos += n
        (count,) = take("<I")
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (n,) = take("<H")
            name = body[pos:pos + n].decode()
            pos += n
            (rank,) = take("<B")
            shape = take(f"<{rank}I")
            size = int(np.prod(shape)) if rank else 1
            tensors[name] = np.frombuffer(body, "<f4", size, pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"{path}: malformed checkpoint body: {exc}") from None
    if pos != len(body):
        raise IntegrityError(f"{path}: {len(body) - pos} trailing bytes")
    return Checkpoint(config, tensors, meta)


def load_into(model: ModelGraph, ckpt: Checkpoint) -> ModelGraph:
    for name, t in model.params.items():
        if name not in ckpt.tensors or ckpt.tensors[name].shape != t.shape:
            raise ConfigMismatchError(f"checkpoint lacks parameter {name} with shape {t.shape}")
        t.data[...] = ckpt.tensors[name]
    for name, arr in model.buffers().items():
        if name not in ckpt.tensors:
            raise ConfigMismatchError(f"checkpoint lacks buffer {name}")
        model.set_buffer(name, ckpt.tensors[name].astype(arr.dtype).copy())
    return model


def load_checkpoint(path: str | Path, expected: NetworkConfig | None = None) -> ModelGraph:
    """Rebuild a model from a checkpoint, optionally insisting on a given config."""
    ckpt = read_checkpoint(path)
    if expected is not None and expected.canonical_json() != ckpt.config.canonical_json():
        diffs = {k: (v, ckpt.config.to_dict()[k]) for k, v in expected.to_dict().items()
                 if ckpt.config.to_dict()[k] != v}
        raise ConfigMismatchError(f"{path}: config mismatch (expected, found): {diffs}")
    return load_into(ModelGraph(ckpt.config), ckpt)
