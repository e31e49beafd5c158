"""Binary checkpoint format for named parameter/buffer tables.

Layout (all integers little-endian)::

    magic     8 bytes   b"GSPCKPT1"
    count     uint32    number of entries
    per entry:
      name_len  uint16, name (utf-8)
      ndim      uint8, dims (uint32 x ndim)
      data      float64 little-endian, row-major, prod(dims) values

Entries are written in sorted name order so identical states give
byte-identical files.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GSPCKPT1"


class CheckpointError(ValueError):
    pass


def dumps(state):
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.asarray(state[name])
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (count,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    state = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            state[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return state


def save(path, state):
    Path(path).write_bytes(dumps(state))


def load(path):
    return loads(Path(path).read_bytes())
