"""CSTF binary tensor container.

Layout of one record (all integers little-endian)::

    b"CSTF" | version u8 (=1) | dtype u8 (0 = float32) | ndim u8 | ndim x u32 dims | payload

The payload is the row-major float32 data. A file may hold several records
back to back; checkpoints use this to store every tensor of a model.
"""

import struct

import numpy as np

MAGIC = b"CSTF"
VERSION = 1
DTYPE_F32 = 0


class CstfError(ValueError):
    pass


def encode(array):
    a = np.asarray(array)
    if a.dtype != np.float32:
        a = a.astype(np.float32)
    if a.ndim > 255:
        raise CstfError("too many dimensions")
    if any(d > 0xFFFFFFFF for d in a.shape):
        raise CstfError("dimension does not fit in u32")
    head = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode(buf, offset=0):
    """Decode one record at ``offset``; returns ``(array, next_offset)``."""
    mv = memoryview(buf)
    if len(mv) - offset < 7 or bytes(mv[offset:offset + 4]) != MAGIC:
        raise CstfError("not a CSTF record (bad magic)")
    version, dtype, ndim = struct.unpack_from("<BBB", mv, offset + 4)
    if version != VERSION:
        raise CstfError(f"unsupported CSTF version {version}")
    if dtype != DTYPE_F32:
        raise CstfError(f"unsupported CSTF dtype code {dtype}")
    pos = offset + 7
    if len(mv) - pos < 4 * ndim:
        raise CstfError("truncated CSTF header")
    dims = struct.unpack_from(f"<{ndim}I", mv, pos)
    pos += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    end = pos + 4 * count
    if end > len(mv):
        raise CstfError(f"truncated payload: need {4 * count} bytes, have {len(mv) - pos}")
    arr = np.frombuffer(mv[pos:end], dtype="<f4").astype(np.float32).reshape(dims)
    return arr, end


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode(buf)
    if end != len(buf):
        raise CstfError(f"{path}: trailing bytes after the tensor")
    return arr


def write_tensors(path, arrays):
    with open(path, "wb") as fh:
        for a in arrays:
            fh.write(encode(a))


def read_tensors(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    out, pos = [], 0
    while pos < len(buf):
        arr, pos = decode(buf, pos)
        out.append(arr)
    return out
