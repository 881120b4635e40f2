"""Bit-exact binary serialization of named parameter tensors.

File layout (little-endian):

    magic "HILLIE01" | u8 model_kind (0=enhancer, 1=ranker) | u32 stage
    u32 entry_count
    per entry: u32 name_len | name utf-8 | u32 rank | u64 * rank dims
               float64 * prod(dims) values, row-major

Values are written as raw IEEE-754 doubles, so a round trip reproduces every
bit pattern exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CheckpointFormatError

MAGIC = b"HILLIE01"
KIND_TO_CODE = {"enhancer": 0, "ranker": 1}
CODE_TO_KIND = {v: k for k, v in KIND_TO_CODE.items()}


@dataclass
class CheckpointEntry:
    name: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class ParamCheckpoint:
    """Ordered collection of named float64 tensors plus model identity."""

    model_kind: str
    stage: int
    entries: list[CheckpointEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.model_kind not in KIND_TO_CODE:
            raise CheckpointFormatError(f"unknown model_kind {self.model_kind!r}")
        if self.stage < 0:
            raise CheckpointFormatError(f"stage must be >= 0, got {self.stage}")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise CheckpointFormatError("duplicate entry names")

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> np.ndarray:
        for e in self.entries:
            if e.name == name:
                return e.values
        raise KeyError(name)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {e.name: e.values for e in self.entries}


def write_checkpoint(ckpt: ParamCheckpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC,
              struct.pack("<BII", KIND_TO_CODE[ckpt.model_kind], ckpt.stage, len(ckpt.entries))]
    for entry in ckpt.entries:
        name_bytes = entry.name.encode("utf-8")
        values = np.asarray(entry.values, dtype="<f8")
        if not values.flags["C_CONTIGUOUS"]:
            values = np.ascontiguousarray(values)
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}Q", *values.shape))
        chunks.append(values.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.path}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> ParamCheckpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes")
    kind_code, stage, count = reader.unpack("<BII")
    if kind_code not in CODE_TO_KIND:
        raise CheckpointFormatError(f"{path}: unknown model kind code {kind_code}")
    entries = []
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        n_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = reader.take(8 * n_values)
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        entries.append(CheckpointEntry(name, values))
    if reader.pos != len(reader.data):
        raise CheckpointFormatError(f"{path}: trailing bytes after last entry")
    return ParamCheckpoint(model_kind=CODE_TO_KIND[kind_code], stage=stage, entries=entries)
