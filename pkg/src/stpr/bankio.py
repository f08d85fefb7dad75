"""Versioned binary persistence for the frozen expert bank and its anchors.

Layout (all integers little-endian uint32, all floats little-endian float64):

    magic    8 bytes  b"STPRBANK"
    version  uint32
    hash     64 bytes ascii hex of the resolved run configuration
    heads    uint32
    n_tasks  uint32
    for each expert, ascending task id:
        task_id  uint32
        n_blobs  uint32
        for each parameter blob in declaration order
        (cls_token, then per layer wq, wk, wv, wo, w1, w2):
            name   uint32 length + utf-8 bytes
            ndim   uint32, then one uint32 per dimension
            data   float64 payload
    n_anchors uint32
    for each anchor, ascending class id:
        class_id uint32
        task_id  uint32
        temporal uint32 length + float64 payload
        spatial  uint32 length + float64 payload

Round-trips are exact: float64 bits pass through untouched, so a reloaded
bank evaluates bit-identically to the one that was saved.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .autodiff import Tensor
from .errors import SerializationError
from .expert import ExpertBank, ExpertLayer, ExpertParams
from .tdmoe import AnchorEntry, AnchorPool

MAGIC = b"STPRBANK"
VERSION = 1

_LAYER_FIELDS = ("wq", "wk", "wv", "wo", "w1", "w2")


def _blobs_of(expert: ExpertParams) -> list[tuple[str, np.ndarray]]:
    out = [("cls_token", expert.cls_token.data)]
    for i, layer in enumerate(expert.layers):
        for f in _LAYER_FIELDS:
            out.append((f"layer{i}.{f}", getattr(layer, f).data))
    return out


def _pack_u32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def _pack_array(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return _pack_u32(a.ndim, *a.shape) + a.tobytes()


def _pack_vector(vec: np.ndarray) -> bytes:
    v = np.ascontiguousarray(vec, dtype="<f8").ravel()
    return _pack_u32(v.size) + v.tobytes()


def save_bank(path, bank: ExpertBank, anchors: AnchorPool, config_hash: str) -> None:
    """Write the bank atomically: the file appears complete or not at all."""
    digest = config_hash.encode("ascii")
    if len(digest) != 64:
        raise SerializationError(f"config hash must be 64 hex characters, got {len(digest)}")
    heads = bank.experts[0].heads if len(bank) else 0
    parts = [MAGIC, _pack_u32(VERSION), digest, _pack_u32(heads, len(bank))]
    for expert in bank:
        blobs = _blobs_of(expert)
        parts.append(_pack_u32(expert.task_id, len(blobs)))
        for name, arr in blobs:
            encoded = name.encode("utf-8")
            parts.append(_pack_u32(len(encoded)) + encoded + _pack_array(arr))
    class_ids = anchors.classes()
    parts.append(_pack_u32(len(class_ids)))
    for class_id in class_ids:
        entry = anchors.entries[class_id]
        parts.append(_pack_u32(entry.class_id, entry.task_id))
        parts.append(_pack_vector(entry.temporal))
        parts.append(_pack_vector(entry.spatial))
    payload = b"".join(parts)

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bank-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise SerializationError("bank file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self) -> np.ndarray:
        ndim = self.u32()
        if ndim > 8:
            raise SerializationError(f"implausible array rank {ndim}")
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape)
        return data.astype(np.float64, copy=True)

    def vector(self) -> np.ndarray:
        size = self.u32()
        return np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64, copy=True)

    def done(self) -> bool:
        return self.pos == len(self.buf)


def load_bank(path, expected_hash: str | None = None) -> tuple[ExpertBank, AnchorPool, str]:
    """Read a bank file back; returns (bank, anchors, stored config hash).

    When expected_hash is given, a stored hash that disagrees raises: the bank
    belongs to a different resolved configuration and must not be mixed in.
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(len(MAGIC)) != MAGIC:
        raise SerializationError(f"{path} is not a bank file (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise SerializationError(f"unsupported bank version {version}, expected {VERSION}")
    stored_hash = reader.take(64).decode("ascii")
    if expected_hash is not None and stored_hash != expected_hash:
        raise SerializationError(
            f"bank belongs to configuration {stored_hash[:12]}…, expected {expected_hash[:12]}…"
        )
    heads = reader.u32()
    n_tasks = reader.u32()

    bank = ExpertBank()
    for _ in range(n_tasks):
        task_id = reader.u32()
        n_blobs = reader.u32()
        blobs: dict[str, np.ndarray] = {}
        for _ in range(n_blobs):
            name = reader.take(reader.u32()).decode("utf-8")
            blobs[name] = reader.array()
        if "cls_token" not in blobs:
            raise SerializationError(f"expert for task {task_id} is missing its cls_token blob")
        n_layers = (len(blobs) - 1) // len(_LAYER_FIELDS)
        layers = []
        for i in range(n_layers):
            tensors = []
            for f in _LAYER_FIELDS:
                key = f"layer{i}.{f}"
                if key not in blobs:
                    raise SerializationError(f"expert for task {task_id} is missing blob {key}")
                tensors.append(Tensor(blobs[key]))
            layers.append(ExpertLayer(*tensors))
        bank.add(ExpertParams(task_id, Tensor(blobs["cls_token"]), layers, heads, frozen=True))

    anchors = AnchorPool()
    n_anchors = reader.u32()
    for _ in range(n_anchors):
        class_id = reader.u32()
        task_id = reader.u32()
        temporal = reader.vector()
        spatial = reader.vector()
        anchors.add(AnchorEntry(class_id=class_id, task_id=task_id, temporal=temporal, spatial=spatial))
    if not reader.done():
        raise SerializationError(f"{len(reader.buf) - reader.pos} trailing bytes after bank payload")
    return bank, anchors, stored_hash
