"""Binary checkpoint files for named tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"SPLT"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor:
        name_len u16, name UTF-8 bytes
        dtype    u8   (0 = float32, 1 = float64)
        rank     u8
        extents  rank x u64
        data     raw little-endian values, row-major

Round-tripping float64 tensors is bit-exact, so a saved model reproduces its
logits exactly after loading.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"SPLT"
VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr)
        key = np.dtype(a.dtype).newbyteorder("<")
        if key not in _DTYPE_TAGS:
            raise CheckpointError(f"tensor {name}: unsupported dtype {a.dtype}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:32]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[key], a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(a.astype(key, copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + name_len].decode("utf-8")
        off += name_len
        tag, rank = struct.unpack_from("<BB", buf, off)
        off += 2
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"{path}: tensor {name}: unknown dtype tag {tag}")
        shape = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        dtype = _TAG_DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if rank == 0:
            shape = ()
            nbytes = dtype.itemsize
        if off + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated data for tensor {name}")
        data = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=off)
        off += nbytes
        tensors[name] = data.reshape(shape).copy()
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes after last tensor")
    return tensors
