"""Flat binary checkpoint files for model parameters and buffers.

Layout, all integers little-endian:

    magic     8 bytes  b"SJENCKPT"
    version   u32      format version, currently 1
    id_len    u32      length of the model identity string
    identity  id_len   utf-8 ("teacher" | "student" | "bad_student")
    count     u32      number of records

    per record:
    name_len  u32
    name      name_len utf-8
    rank      u32
    dims      rank x u32
    payload   prod(dims) x float64

Records hold parameters first, then buffers (batch-norm running statistics),
in the model's deterministic traversal order. Round trips are exact: float64
bits pass through untouched.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .layers import Module

MAGIC = b"SJENCKPT"
VERSION = 1
IDENTITIES = ("teacher", "student", "bad_student")


def save(path, model: Module, identity: str) -> None:
    if identity not in IDENTITIES:
        raise DataError(f"unknown model identity {identity!r}, expected one of {IDENTITIES}")
    items = model.state_items()
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    ident = identity.encode()
    chunks.append(struct.pack("<I", len(ident)))
    chunks.append(ident)
    chunks.append(struct.pack("<I", len(items)))
    for name, tensor in items:
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        dims = tensor.data.shape
        chunks.append(struct.pack("<I", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"checkpoint {self.path} truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load(path) -> tuple[str, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (identity, name -> float64 array)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path} is not a model checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"checkpoint {path} has unsupported version {version}")
    identity = r.take(r.u32()).decode()
    count = r.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims)
        records[name] = payload.astype(np.float64)
    if r.pos != len(blob):
        raise DataError(f"checkpoint {path} has {len(blob) - r.pos} trailing bytes")
    return identity, records


def load_into(path, model: Module, expect_identity: str | None = None) -> str:
    """Overwrite a model's parameters and buffers in place from a checkpoint."""
    identity, records = load(path)
    if expect_identity is not None and identity != expect_identity:
        raise DataError(
            f"checkpoint {path} holds a {identity!r} model, expected {expect_identity!r}"
        )
    items = model.state_items()
    have = {name for name, _ in items}
    if have != set(records):
        missing = sorted(have - set(records))
        extra = sorted(set(records) - have)
        raise DataError(
            f"checkpoint {path} does not match the model: "
            f"missing {missing[:3]}, unexpected {extra[:3]}"
        )
    for name, tensor in items:
        value = records[name]
        if value.shape != tensor.data.shape:
            raise DataError(
                f"checkpoint {path} record {name} has shape {value.shape}, "
                f"model expects {tensor.data.shape}"
            )
        tensor.data = value.copy()
    return identity
