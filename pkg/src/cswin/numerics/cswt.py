"""CSWT binary tensor format.

Layout (all integers little-endian)::

    magic   4 bytes  b"CSWT"
    version u8       1
    dtype   u8       0 = float32, 1 = float64
    rank    u8
    dims    rank x u32
    payload row-major values of the given dtype
"""

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"CSWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {"float32": 0, "float64": 1}


def encode(tensor, dtype="float64"):
    if dtype not in _CODES:
        raise FormatError(f"unsupported dtype {dtype!r}; expected float32 or float64")
    arr = np.asarray(tensor)
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    code = _CODES[dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode(data):
    data = bytes(data)
    if len(data) < 7:
        raise FormatError("truncated header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic bytes {data[:4]!r}")
    version, code, rank = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off = 7 + 4 * rank
    if len(data) < off:
        raise FormatError("truncated dimension table")
    shape = struct.unpack_from(f"<{rank}I", data, 7)
    dt = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) != off + count * dt.itemsize:
        raise FormatError(
            f"payload is {len(data) - off} bytes, expected {count * dt.itemsize} for shape {shape}"
        )
    arr = np.frombuffer(data, dtype=dt, count=count, offset=off).reshape(shape)
    return arr.astype(np.float64)


def save(path, tensor, dtype="float64"):
    with open(path, "wb") as fh:
        fh.write(encode(tensor, dtype))


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
