"""Versioned binary checkpoints.

Layout (little endian)::

    magic  b"MCCK"        4 bytes
    version               u32
    config digest         32 bytes (sha256 of the config text)
    entry count           u32
    entries:
        name length u16, name utf-8
        dtype code  u8
        ndim u8, shape u64 * ndim
        payload     prod(shape) * itemsize bytes
"""
import struct

import numpy as np

from .exceptions import MCCError

__all__ = ["MAGIC", "VERSION", "save_arrays", "load_arrays", "CheckpointError"]

MAGIC = b"MCCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1", 4: "|b1", 5: "<u8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(MCCError):
    pass


def save_arrays(path, arrays, digest):
    """Write ``arrays`` (name -> ndarray) with a 32-byte config ``digest``."""
    if len(digest) != 32:
        raise CheckpointError("digest must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            if np.dtype(dt) not in _CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            arr = np.ascontiguousarray(arr, dtype=dt).reshape(arr.shape)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", _CODES[np.dtype(dt)], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path):
    """Return ``(arrays, digest)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = buf[8:40]
    (count,) = struct.unpack_from("<I", buf, 40)
    pos = 44
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dt = np.dtype(_DTYPES[code])
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arrays[name] = np.frombuffer(buf[pos:pos + size], dtype=dt).reshape(shape).copy()
        pos += size
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after {count} entries")
    return arrays, digest
