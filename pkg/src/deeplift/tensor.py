"""Checked float64 array primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. The helpers here add the contracts the engine relies on: no implicit
broadcasting, no silent NaN/Inf, argmax ties resolved toward the lowest index.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import AxisOutOfRange, NonFinite, ShapeMismatch

Tensor = np.ndarray

_UNARY = {
    "relu": lambda a: np.maximum(a, 0.0),
    "sigmoid": lambda a: 1.0 / (1.0 + np.exp(-a)),
    "tanh": np.tanh,
    "exp": np.exp,
}
_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "min": np.minimum,
}


def tensor(data, shape: Optional[Sequence[int]] = None) -> Tensor:
    """Build a float64 tensor, optionally from flat ``data`` and a ``shape``."""
    arr = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape):
            raise ShapeMismatch(f"negative extent in shape {shape}")
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ShapeMismatch(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    return arr


def check_finite(a: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"non-finite values in {what}")
    return a


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat offset of a multi-index."""
    if len(shape) != len(index):
        raise ShapeMismatch(f"index {tuple(index)} does not match rank {len(shape)}")
    flat = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise AxisOutOfRange(f"index {tuple(index)} outside shape {tuple(shape)}")
        flat = flat * extent + i
    return flat


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    if op in _UNARY:
        if b is not None:
            raise ShapeMismatch(f"{op} takes a single operand")
        with np.errstate(all="ignore"):
            out = _UNARY[op](a)
    elif op in _BINARY:
        if b is None:
            raise ShapeMismatch(f"{op} needs two operands")
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
            raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")
        if op == "div" and np.any(b == 0):
            raise NonFinite("division by zero")
        with np.errstate(all="ignore"):
            out = _BINARY[op](a, b)
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return check_finite(np.ascontiguousarray(out), op)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def reduce(op: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum, mean or argmax, summing in ascending flat-index order.

    ``numpy.add.reduce`` uses pairwise summation, which is deterministic but
    not left-to-right; a cumulative sum is strictly sequential.
    """
    a = np.asarray(a, dtype=np.float64)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for rank {a.ndim}")
    if op == "argmax":
        # np.argmax returns the first occurrence of the maximum
        return np.asarray(np.argmax(a, axis=axis))
    if op not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op!r}")
    if axis is None:
        flat = a.reshape(-1)
        total = np.cumsum(flat)[-1] if flat.size else np.float64(0.0)
        count = flat.size
    else:
        moved = np.moveaxis(a, axis, -1)
        total = np.cumsum(moved, axis=-1)[..., -1] if moved.shape[-1] else np.zeros(moved.shape[:-1])
        count = a.shape[axis]
    out = np.asarray(total, dtype=np.float64)
    if op == "mean":
        if count == 0:
            raise NonFinite("mean of empty tensor")
        out = out / count
    return check_finite(out, op)
