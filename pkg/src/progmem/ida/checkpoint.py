"""Binary checkpoint format with superset loading.

Layout (all integers little-endian)::

    b"PMEM" | u32 version | u32 manifest_len | manifest (UTF-8 JSON:
    [[name, shape, byte_offset], ...]) | u64 text_len | text block (UTF-8 JSON:
    vocabulary, bank boundaries, model config, metadata) | u64 payload_len |
    payload (float64 arrays, little-endian, back to back) | u32 CRC32(payload)
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..model import MemoryRNNClassifier, ModelConfig

MAGIC = b"PMEM"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint file."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    """Truncated or corrupted content."""


class CheckpointShapeError(CheckpointError):
    """A stored array does not fit inside the target parameter."""


@dataclass
class Checkpoint:
    arrays: dict
    vocab: Optional[list] = None
    boundaries: list = field(default_factory=list)
    config: Optional[dict] = None
    metadata: dict = field(default_factory=dict)
    version: int = VERSION


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    manifest, chunks, offset = [], [], 0
    for name, arr in ckpt.arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append([name, list(a.shape), offset])
        b = a.tobytes()
        chunks.append(b)
        offset += len(b)
    payload = b"".join(chunks)
    man = json.dumps(manifest).encode("utf-8")
    text = json.dumps({"vocab": ckpt.vocab, "boundaries": list(ckpt.boundaries),
                       "config": ckpt.config, "metadata": ckpt.metadata},
                      ensure_ascii=False, sort_keys=True).encode("utf-8")
    blob = b"".join([
        MAGIC, struct.pack("<I", ckpt.version),
        struct.pack("<I", len(man)), man,
        struct.pack("<Q", len(text)), text,
        struct.pack("<Q", len(payload)), payload,
        struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
    ])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes {blob[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointIntegrityError(f"{path}: truncated at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    try:
        (mlen,) = struct.unpack("<I", take(4))
        manifest = json.loads(take(mlen).decode("utf-8"))
        (tlen,) = struct.unpack("<Q", take(8))
        text = json.loads(take(tlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(f"{path}: unreadable header ({e})") from None
    (plen,) = struct.unpack("<Q", take(8))
    payload = take(plen)
    (crc,) = struct.unpack("<I", take(4))
    if pos != len(blob):
        raise CheckpointIntegrityError(f"{path}: {len(blob) - pos} trailing bytes")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")
    arrays = {}
    for name, shape, off in manifest:
        n = int(np.prod(shape)) * 8
        if off + n > plen:
            raise CheckpointIntegrityError(f"{path}: array {name} runs past the payload")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=n // 8,
                                     offset=off).reshape(shape).astype(np.float64)
    return Checkpoint(arrays, text.get("vocab"), text.get("boundaries") or [],
                      text.get("config"), text.get("metadata") or {}, version)


def save_checkpoint(model: MemoryRNNClassifier, path, vocab=None, metadata=None) -> None:
    ckpt = Checkpoint(
        arrays=model.state(),
        vocab=None if vocab is None else vocab.to_list(),
        boundaries=[] if model.bank is None else list(model.bank.domain_boundaries),
        config=model.config.to_dict(),
        metadata=dict(metadata or {}),
    )
    write_checkpoint(path, ckpt)


def load_into(model: MemoryRNNClassifier, ckpt: Checkpoint) -> MemoryRNNClassifier:
    """Superset load: each stored array fills the leading block of its target."""
    params = model.parameters()
    for name, arr in ckpt.arrays.items():
        if name not in params:
            raise CheckpointShapeError(f"target model has no parameter {name}")
        tgt = params[name]
        if arr.ndim != tgt.ndim or any(s > t for s, t in zip(arr.shape, tgt.shape)):
            raise CheckpointShapeError(
                f"{name}: stored shape {arr.shape} exceeds target shape {tgt.shape}")
    for name, arr in ckpt.arrays.items():
        params[name].data[tuple(slice(0, n) for n in arr.shape)] = arr
    if model.bank is not None and ckpt.boundaries:
        b = list(ckpt.boundaries)
        if model.bank.n_slots > b[-1]:
            b.append(model.bank.n_slots)
        model.bank.domain_boundaries = b
    return model


def load_checkpoint(path, model: Optional[MemoryRNNClassifier] = None) -> MemoryRNNClassifier:
    """Load ``path`` into ``model`` (superset rules) or into a model rebuilt from it."""
    ckpt = read_checkpoint(path)
    if model is None:
        if ckpt.config is None:
            raise CheckpointError(f"{path}: no model config stored; pass a target model")
        model = MemoryRNNClassifier(ModelConfig.from_dict(ckpt.config), np.random.default_rng(0))
    return load_into(model, ckpt)
