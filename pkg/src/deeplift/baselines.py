"""Gradient-family attribution baselines over the same graphs.

Variants differ only at ReLUs during the backward pass:

* ``plain``  - exact reverse-mode gradient.
* ``guided`` - the signal is zeroed where the forward input is negative or the
  backward signal is negative.
* ``deconv`` - the signal is zeroed where the backward signal is negative,
  regardless of the forward input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import AttributionResult, Target, select_target, target_output, _reference_batch
from .errors import DataError
from .graph import Activation, Graph, ReLU, forward

VARIANTS = ("plain", "guided", "deconv")


@dataclass(frozen=True)
class GradientRecord:
    """Gradients of the target w.r.t. the activations at each position."""

    grads: tuple
    variant: str
    warnings: tuple = ()


def backward(g: Graph, act, target: Target, variant: str = "plain") -> GradientRecord:
    if variant not in VARIANTS:
        raise DataError(f"unknown gradient variant {variant!r}")
    p = target.position
    batch = act.batch_size
    grad = np.zeros((batch, int(np.prod(g.shapes[p]))))
    grad[:, target.index] = 1.0
    grad = grad.reshape((batch,) + g.shapes[p])
    grads = [grad]
    warnings = []
    for i in reversed(range(p)):
        layer = g.layers[i]
        x, y = act[i], act[i + 1]
        if isinstance(layer, ReLU) and variant == "guided":
            grad = grad * (x > 0) * (grad > 0)
        elif isinstance(layer, ReLU) and variant == "deconv":
            grad = np.maximum(grad, 0.0)
        else:
            if variant != "plain" and isinstance(layer, Activation):
                warnings.append(
                    f"layer {i} ({layer.kind}): {variant} defined only for ReLU; used plain gradient"
                )
            grad = layer.backward(x, y, grad)
        grads.append(grad)
    return GradientRecord(tuple(reversed(grads)), variant, tuple(warnings))


def _gradient(g, xb, target, variant):
    act = forward(g, xb, upto=target.position)
    return backward(g, act, target, variant)


def _finish(g, xb, batched, rb, scores, t, method, reference_name, warnings=()):
    delta_t = target_output(g, xb, t) - target_output(g, rb, t)
    metadata = {"warnings": list(warnings)} if warnings else {}
    if not batched:
        scores, delta_t = scores[0], float(delta_t[0])
    return AttributionResult(scores, t.index, method, reference_name, delta_t, metadata)


_VARIANT_NAMES = {"plain": "gradient", "guided": "guided", "deconv": "deconv"}


def input_gradient(g: Graph, x, target: int = 0, variant: str = "plain", use_final: bool = False,
                   reference=None) -> AttributionResult:
    """Gradient of the target w.r.t. the input (a saliency map)."""
    xb, batched, rb = _reference_batch(g, x, reference)
    t = select_target(g, target, use_final)
    rec = _gradient(g, xb, t, variant)
    return _finish(g, xb, batched, rb, rec.grads[0], t, _VARIANT_NAMES[variant],
                   "none", rec.warnings)


def gradient_times_input(g: Graph, x, reference=None, target: int = 0,
                         use_final: bool = False, reference_name: str = "zeros") -> AttributionResult:
    """Gradient times the input's difference from ``reference``."""
    xb, batched, rb = _reference_batch(g, x, reference)
    t = select_target(g, target, use_final)
    rec = _gradient(g, xb, t, "plain")
    return _finish(g, xb, batched, rb, rec.grads[0] * (xb - rb), t, "gradXinput", reference_name)


def guided_times_input(g: Graph, x, reference=None, target: int = 0,
                       use_final: bool = False, reference_name: str = "zeros") -> AttributionResult:
    xb, batched, rb = _reference_batch(g, x, reference)
    t = select_target(g, target, use_final)
    rec = _gradient(g, xb, t, "guided")
    return _finish(g, xb, batched, rb, rec.grads[0] * (xb - rb), t, "guidedXinput",
                   reference_name, rec.warnings)


def integrated_gradients(g: Graph, x, reference=None, target: int = 0, n_intervals: int = 50,
                         use_final: bool = False, reference_name: str = "zeros") -> AttributionResult:
    """Path-integrated gradients from ``reference`` to ``x``, midpoint rule."""
    if int(n_intervals) < 1:
        raise DataError("integrated gradients needs n_intervals >= 1")
    n = int(n_intervals)
    xb, batched, rb = _reference_batch(g, x, reference)
    t = select_target(g, target, use_final)
    diff = xb - rb
    # running mean: stays bit-exact when every step sees the same gradient
    mean = np.zeros_like(xb)
    for k in range(n):
        alpha = (k + 0.5) / n
        step = _gradient(g, rb + alpha * diff, t, "plain").grads[0]
        mean += (step - mean) / (k + 1)
    scores = mean * diff
    return _finish(g, xb, batched, rb, scores, t, f"intgrad:{n}", reference_name)
