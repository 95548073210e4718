"""Self-describing little-endian parameter container.

Layout::

    magic   8 bytes  b"ECHOCKPT"
    version u32      1
    count   u32
    repeated count times:
        name_len u32, name (utf-8), rank u32, extents u32 * rank,
        values   float64 * prod(extents), C order

No external serialisation library is involved, so a checkpoint written from
the same parameters is byte-identical.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"ECHOCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict:
    if buf[:8] != MAGIC:
        raise CheckpointError("not an EchoIR checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        count_vals = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count_vals > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=count_vals, offset=pos).reshape(shape).copy()
        pos += 8 * count_vals
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last parameter")
    return out


def save_checkpoint(path, params: dict) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(params))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def load_into(module, params: dict) -> None:
    """Copy arrays into a module's parameters; names and shapes must match exactly."""
    own = module.named_parameters()
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in own.items():
        if p.data.shape != params[name].shape:
            raise CheckpointError(f"{name}: shape {params[name].shape} != {p.data.shape}")
        p.data[...] = params[name]
