"""Independent ground truth: exact Shapley values, finite differences, occlusion."""

from __future__ import annotations

from math import factorial
from typing import Callable

import numpy as np

from .attribution import AttributionResult, select_target, target_output, _reference_batch
from .errors import DataError, NonFinite
from .graph import Graph

MAX_PLAYERS = 10

CoalitionValueFn = Callable[[int], float]


def coalition_fn(g: Graph, x, reference, target: int = 0, use_final: bool = False) -> CoalitionValueFn:
    """Target output when the inputs selected by a bitmask take their actual
    value and all others sit at the reference. Bit ``i`` is flat element ``i``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    t = select_target(g, target, use_final)
    cache = {}

    def value(mask: int) -> float:
        if mask not in cache:
            bits = np.array([(mask >> i) & 1 for i in range(x.size)], dtype=bool)
            point = np.where(bits, x, ref).reshape((1,) + g.input_shape)
            cache[mask] = float(target_output(g, point, t)[0])
        return cache[mask]

    return value


def shapley_exact(f: CoalitionValueFn, n_inputs: int) -> np.ndarray:
    """Exact Shapley values of ``n_inputs`` players.

    Averages each player's marginal contribution over all ``n!`` join orders,
    grouped by the coalition that precedes it: a coalition of size ``s`` comes
    first in ``s! (n - s - 1)!`` of the orders.
    """
    n = int(n_inputs)
    if n < 1:
        raise DataError("need at least one player")
    if n > MAX_PLAYERS:
        raise DataError(f"exact enumeration capped at {MAX_PLAYERS} players, got {n}")
    masks = np.arange(1 << n)
    values = np.array([f(int(m)) for m in masks], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFinite("coalition value is not finite")
    sizes = np.array([bin(int(m)).count("1") for m in masks])
    weight = np.array([factorial(s) * factorial(n - s - 1) if s < n else 0 for s in range(n + 1)],
                      dtype=np.float64) / factorial(n)
    phi = np.zeros(n)
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        marginal = values[without | (1 << i)] - values[without]
        phi[i] = np.sum(weight[sizes[without]] * marginal)
    return phi


def finite_diff_gradient(g: Graph, x, target: int = 0, h: float = 1e-5, use_final: bool = False) -> np.ndarray:
    """Central differences of the target w.r.t. each input element."""
    if not h > 0:
        raise DataError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    t = select_target(g, target, use_final)
    n = x.size
    eye = np.eye(n).reshape((n,) + x.shape)
    plus = target_output(g, x[None] + h * eye, t)
    minus = target_output(g, x[None] - h * eye, t)
    grad = (plus - minus) / (2 * h)
    if not np.all(np.isfinite(grad)):
        raise NonFinite("finite difference produced a non-finite value")
    return grad.reshape(x.shape)


def occlusion_scores(g: Graph, x, reference=None, target: int = 0, use_final: bool = False,
                     per_position: bool = False, reference_name: str = "zeros") -> AttributionResult:
    """Drop in the target when each input element is set to its reference value.

    With ``per_position`` (rank-2 sequence inputs) a whole position is replaced
    by its reference row, and the position's score is placed on the channels
    in proportion to the input there; for one-hot input it lands on the
    observed base.
    """
    xb, batched, rb = _reference_batch(g, x, reference)
    rb = np.broadcast_to(rb, xb.shape)
    t = select_target(g, target, use_final)
    base = target_output(g, xb, t)
    ref_out = target_output(g, rb, t)
    if per_position:
        if len(g.input_shape) != 2:
            raise DataError("per-position occlusion needs (length, channels) inputs")
        length = g.input_shape[0]
        scores = np.zeros_like(xb)
        for pos in range(length):
            probe = xb.copy()
            probe[:, pos, :] = rb[:, pos, :]
            drop = base - target_output(g, probe, t)
            scores[:, pos, :] = drop[:, None] * xb[:, pos, :]
    else:
        flat_x = xb.reshape(xb.shape[0], -1)
        flat_r = rb.reshape(rb.shape[0], -1)
        scores = np.zeros_like(flat_x)
        for i in range(flat_x.shape[1]):
            if np.all(flat_x[:, i] == flat_r[:, i]):
                continue
            probe = flat_x.copy()
            probe[:, i] = flat_r[:, i]
            scores[:, i] = base - target_output(g, probe.reshape(xb.shape), t)
        scores = scores.reshape(xb.shape)
    delta_t = base - ref_out
    if not batched:
        scores, delta_t = scores[0], float(delta_t[0])
    return AttributionResult(scores, t.index, "occlusion", reference_name, delta_t)
