"""IDX container format (the MNIST distribution format)."""

from __future__ import annotations

import struct

import numpy as np

from ..errors import BadMagic, Truncated

_TYPES = {0x08: np.dtype("u1"), 0x0D: np.dtype(">f4")}


def load_idx(data: bytes, scale: bool = True) -> np.ndarray:
    """Decode an IDX blob into a float64 array of the declared shape.

    Unsigned-byte payloads are divided by 255 when ``scale`` is set (pixel
    data); pass ``scale=False`` for label files.
    """
    if len(data) < 4:
        raise Truncated("IDX header shorter than 4 bytes")
    zero1, zero2, type_code, rank = data[0], data[1], data[2], data[3]
    if zero1 != 0 or zero2 != 0 or type_code not in _TYPES or rank < 1:
        raise BadMagic(f"bad IDX magic {data[:4].hex()}")
    header = 4 + 4 * rank
    if len(data) < header:
        raise Truncated("IDX dimension header truncated")
    shape = struct.unpack(f">{rank}I", data[4:header])
    dtype = _TYPES[type_code]
    count = int(np.prod(shape, dtype=np.int64))
    need = count * dtype.itemsize
    if len(data) - header < need:
        raise Truncated(f"IDX payload has {len(data) - header} bytes, needs {need}")
    values = np.frombuffer(data, dtype=dtype, count=count, offset=header).astype(np.float64)
    if type_code == 0x08 and scale:
        values = values / 255.0
    return values.reshape(shape)


def dump_idx(array, dtype: str = "u8") -> bytes:
    """Encode an array as IDX; ``dtype`` is ``"u8"`` or ``"f32"``."""
    array = np.asarray(array)
    code = 0x08 if dtype == "u8" else 0x0D
    head = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    body = array.astype("u1" if code == 0x08 else ">f4").tobytes()
    return head + body
