"""Binary checkpoint format ("CNCK").

All integers little-endian::

    magic      4 bytes   b"CNCK"
    version    u32       currently 1
    header     u32 n, then n bytes of UTF-8 JSON:
                 {"kind": str, "config": {...}, "metadata": {...}}
    count      u32       number of parameter blobs
    blob *     u16 name length, name (UTF-8),
               u8 ndim, ndim x u32 dims,
               u64 byte length, raw float64 data (little-endian, C order)

Blobs are written in sorted name order so identical models give identical
files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, CheckpointShapeError, CheckpointTruncatedError
from .model import ModelCheckpoint, from_checkpoint, to_checkpoint

MAGIC = b"CNCK"
VERSION = 1


def dumps(ckpt: ModelCheckpoint) -> bytes:
    header = json.dumps({"kind": ckpt.kind, "config": ckpt.config, "metadata": ckpt.metadata},
                        sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header,
             struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        raw = arr.tobytes()
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.buf)}; needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> ModelCheckpoint:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic bytes {buf[:4]!r}, expected {MAGIC!r}")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"unreadable header: {e}") from None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointFormatError(f"blob {name}: {nbytes} bytes does not match shape {shape}")
        params[name] = np.frombuffer(r.take(nbytes), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after last blob")
    return ModelCheckpoint(header["kind"], header["config"], params, header.get("metadata", {}))


def save_checkpoint(model_or_ckpt, path, **metadata) -> Path:
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, ModelCheckpoint) else to_checkpoint(model_or_ckpt, **metadata)
    path = Path(path)
    path.write_bytes(dumps(ckpt))
    return path


def load_checkpoint(path, into=None):
    """Read a checkpoint file.

    Without ``into`` the stored model is rebuilt and returned. With ``into``
    the parameters are loaded into that existing model, which must have the
    same kind and parameter shapes.
    """
    ckpt = loads(Path(path).read_bytes())
    if into is None:
        return from_checkpoint(ckpt)
    if getattr(into, "kind", None) != ckpt.kind:
        raise CheckpointShapeError(f"checkpoint holds a {ckpt.kind}, target is a {getattr(into, 'kind', type(into))}")
    into.load_state_dict(ckpt.params)
    return into


def read_checkpoint(path) -> ModelCheckpoint:
    return loads(Path(path).read_bytes())
