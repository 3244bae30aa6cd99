"""DeepLIFT: difference-from-reference contributions backpropagated as multipliers.

Every neuron carries a positive and a negative part of its difference from
reference, and multipliers are tracked as a ``(m_pos, m_neg)`` pair for each
part. Affine layers use the Linear rule; single-input nonlinearities use
either Rescale or RevealCancel, chosen per layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError, MissingRule, ReferenceMismatch, ShapeMismatch, TargetOutOfRange
from .graph import (
    Activation,
    ActivationRecord,
    AffineLayer,
    Flatten,
    Graph,
    MaxPool,
    Sigmoid,
    Softmax,
    _Conv,
    Dense,
    as_batch,
    forward,
)

RESCALE = "rescale"
REVEAL_CANCEL = "revealcancel"
RULES = (RESCALE, REVEAL_CANCEL)

# |delta| below which a finite-difference multiplier is replaced by its limit
EPS = 1e-7

PRESETS = ("rescale", "revealcancel", "fc-rc-conv-rs")


@dataclass(frozen=True)
class Target:
    """A neuron of the graph: activation ``position`` and flat ``index`` there."""

    position: int
    index: int


@dataclass(frozen=True)
class DeltaRecord:
    delta: tuple
    delta_pos: tuple
    delta_neg: tuple


@dataclass(frozen=True)
class LayerInput:
    """What a rule needs to know about the input side of one layer."""

    x: np.ndarray
    x0: np.ndarray
    delta: np.ndarray
    delta_pos: np.ndarray
    delta_neg: np.ndarray


@dataclass(frozen=True)
class MultiplierState:
    m_pos: np.ndarray
    m_neg: np.ndarray


@dataclass
class AttributionResult:
    scores: np.ndarray
    target: int
    method: str
    reference: str
    delta_t: Union[float, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        scores = np.asarray(self.scores, dtype=np.float64)
        delta_t = self.delta_t
        delta_t = delta_t.tolist() if isinstance(delta_t, np.ndarray) else float(delta_t)
        out = {
            "method": self.method,
            "target": int(self.target),
            "reference": self.reference,
            "delta_t": delta_t,
            "scores": scores.reshape(-1).tolist(),
            "shape": list(scores.shape),
        }
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "AttributionResult":
        delta_t = d["delta_t"]
        return cls(
            scores=np.asarray(d["scores"], dtype=np.float64).reshape(d["shape"]),
            target=d["target"],
            method=d["method"],
            reference=d["reference"],
            delta_t=np.asarray(delta_t) if isinstance(delta_t, list) else delta_t,
            metadata=d.get("metadata", {}),
        )


# ------------------------------------------------------------------ targets


def select_target(g: Graph, class_index: int, use_final: bool = False) -> Target:
    """Locate the neuron to explain.

    Graphs ending in Softmax or Sigmoid are explained at the logit (the
    input of that final nonlinearity) unless ``use_final`` is set.
    """
    position = len(g.layers)
    if not use_final and isinstance(g.layers[-1], (Softmax, Sigmoid)):
        position -= 1
    size = int(np.prod(g.shapes[position]))
    if not 0 <= int(class_index) < size:
        raise TargetOutOfRange(f"class {class_index} outside output of size {size}")
    return Target(position, int(class_index))


# -------------------------------------------------------------------- rules


def rule_preset(g: Graph, name: str) -> dict:
    """Per-layer rule assignment for a named preset.

    ``fc-rc-conv-rs`` uses RevealCancel after fully connected layers and
    Rescale after convolutions.
    """
    if name not in PRESETS:
        raise DataError(f"unknown rule preset {name!r}; expected one of {PRESETS}")
    rules = {}
    for i, layer in enumerate(g.layers):
        if not isinstance(layer, Activation):
            continue
        if name == "rescale":
            rules[i] = RESCALE
        elif name == "revealcancel":
            rules[i] = REVEAL_CANCEL
        else:
            rules[i] = RESCALE if isinstance(_feeding_affine(g, i), _Conv) else REVEAL_CANCEL
    return rules


def _feeding_affine(g, i):
    for layer in reversed(g.layers[:i]):
        if isinstance(layer, (Dense, _Conv)):
            return layer
    return None


def as_rules(g: Graph, rules) -> dict:
    if isinstance(rules, str):
        return rule_preset(g, rules)
    out = {}
    for k, v in dict(rules).items():
        v = str(v).lower()
        if v not in RULES:
            raise DataError(f"unknown rule {v!r} for layer {k}")
        out[int(k)] = v
    return out


def _split(d):
    return np.maximum(d, 0.0), np.minimum(d, 0.0)


def linear_split(layer: AffineLayer, delta: np.ndarray):
    """Positive/negative parts of an affine output's change, grouped by the
    sign of each ``w_i * dx_i`` term."""
    dp, dn = _split(delta)
    wp, wn = _split(layer.weights)
    pos = layer.linear(dp, wp) + layer.linear(dn, wn)
    neg = layer.linear(dp, wn) + layer.linear(dn, wp)
    return pos, neg


def _rescale_multiplier(layer: Activation, inp: LayerInput):
    dy = layer.fn(inp.x) - layer.fn(inp.x0)
    near = np.abs(inp.delta) < EPS
    safe = np.where(near, 1.0, inp.delta)
    return np.where(near, layer.deriv(inp.x0), dy / safe)


def rescale_split(layer: Activation, inp: LayerInput):
    """Returns (dy_pos, dy_neg, m_pos, m_neg) under the Rescale rule."""
    m = _rescale_multiplier(layer, inp)
    return m * inp.delta_pos, m * inp.delta_neg, m, m


def reveal_cancel_split(layer: Activation, inp: LayerInput):
    """Returns (dy_pos, dy_neg, m_pos, m_neg) under the RevealCancel rule.

    The positive and negative input parts are treated as two players; each
    output part is the mean of its marginal effect over both join orders.
    """
    f = layer.fn
    x0, dp, dn = inp.x0, inp.delta_pos, inp.delta_neg
    f0, fp, fn, fpn = f(x0), f(x0 + dp), f(x0 + dn), f(x0 + dp + dn)
    dy_pos = 0.5 * (fp - f0) + 0.5 * (fpn - fn)
    dy_neg = 0.5 * (fn - f0) + 0.5 * (fpn - fp)
    total = fpn - f0

    m_res = _rescale_multiplier(layer, inp)
    small_p = np.abs(dp) < EPS
    small_n = np.abs(dn) < EPS

    # a near-zero part takes the Rescale multiplier; the other part absorbs
    # the remainder so the two parts still sum to the total change
    dy_pos = np.where(small_p, m_res * dp, np.where(small_n, total - m_res * dn, dy_pos))
    dy_neg = np.where(small_n, m_res * dn, np.where(small_p, total - m_res * dp, dy_neg))
    both = small_p & small_n
    dy_pos = np.where(both, m_res * dp, dy_pos)
    dy_neg = np.where(both, m_res * dn, dy_neg)

    m_pos = np.where(small_p, m_res, dy_pos / np.where(small_p, 1.0, dp))
    m_neg = np.where(small_n, m_res, dy_neg / np.where(small_n, 1.0, dn))
    return dy_pos, dy_neg, m_pos, m_neg


_SPLITS = {RESCALE: rescale_split, REVEAL_CANCEL: reveal_cancel_split}


# ------------------------------------------------------------------- deltas


def compute_deltas(
    g: Graph,
    act: ActivationRecord,
    ref: ActivationRecord,
    rules: Mapping[int, str],
    upto: Optional[int] = None,
) -> DeltaRecord:
    """Differences from reference at every position up to ``upto``, with
    their positive/negative parts."""
    stop = len(g.layers) if upto is None else upto
    batch = act.batch_size
    refs = [np.broadcast_to(ref[i], act[i].shape) for i in range(stop + 1)]
    delta = [act[i] - refs[i] for i in range(stop + 1)]
    pos0, neg0 = _split(delta[0])
    pos, neg = [pos0], [neg0]
    for i, layer in enumerate(g.layers[:stop]):
        if isinstance(layer, AffineLayer):
            p, n = linear_split(layer, delta[i])
        elif isinstance(layer, Activation):
            rule = rules.get(i)
            if rule not in _SPLITS:
                raise MissingRule(f"no rule assigned to layer {i} ({layer.kind})")
            inp = LayerInput(act[i], refs[i], delta[i], pos[i], neg[i])
            p, n, _, _ = _SPLITS[rule](layer, inp)
        elif isinstance(layer, Flatten):
            p, n = pos[i].reshape(batch, -1), neg[i].reshape(batch, -1)
        else:
            p, n = _split(delta[i + 1])
        pos.append(p)
        neg.append(n)
    return DeltaRecord(tuple(delta), tuple(pos), tuple(neg))


# ------------------------------------------------------------- multipliers


def linear_rule(layer: AffineLayer, deltas: LayerInput, incoming: MultiplierState) -> MultiplierState:
    """Chain incoming multipliers through an affine layer.

    A weight routes to the output's positive part when ``w_i * dx_i > 0`` and to
    its negative part when ``< 0``. Inputs with ``dx_i == 0`` send half of
    ``w_i`` through each route.
    """
    in_shape = deltas.delta.shape[1:]
    wp, wn = _split(layer.weights)
    mp, mn = incoming.m_pos, incoming.m_neg
    up = layer.linear_t(mp, wp, in_shape) + layer.linear_t(mn, wn, in_shape)
    down = layer.linear_t(mp, wn, in_shape) + layer.linear_t(mn, wp, in_shape)
    zero = 0.5 * layer.linear_t(mp + mn, layer.weights, in_shape)
    d = deltas.delta
    m = np.where(d > 0, up, np.where(d < 0, down, zero))
    return MultiplierState(m, m)


def rescale_rule(layer: Activation, deltas: LayerInput, incoming: MultiplierState) -> MultiplierState:
    _, _, mp, mn = rescale_split(layer, deltas)
    return MultiplierState(mp * incoming.m_pos, mn * incoming.m_neg)


def reveal_cancel_rule(layer: Activation, deltas: LayerInput, incoming: MultiplierState) -> MultiplierState:
    _, _, mp, mn = reveal_cancel_split(layer, deltas)
    return MultiplierState(mp * incoming.m_pos, mn * incoming.m_neg)


_RULE_FNS = {RESCALE: rescale_rule, REVEAL_CANCEL: reveal_cancel_rule}


def _step(g, i, rules, inp: LayerInput, state: MultiplierState) -> MultiplierState:
    layer = g.layers[i]
    if isinstance(layer, AffineLayer):
        return linear_rule(layer, inp, state)
    if isinstance(layer, Activation):
        rule = rules.get(i)
        if rule not in _RULE_FNS:
            raise MissingRule(f"no rule assigned to layer {i} ({layer.kind})")
        return _RULE_FNS[rule](layer, inp, state)
    if isinstance(layer, Flatten):
        shape = inp.delta.shape
        return MultiplierState(state.m_pos.reshape(shape), state.m_neg.reshape(shape))
    if isinstance(layer, MaxPool):
        return MultiplierState(layer.route(inp.x, state.m_pos), layer.route(inp.x, state.m_neg))
    if isinstance(layer, Softmax):
        raise MissingRule(
            "DeepLIFT does not propagate through Softmax; target the logit and use "
            "normalize_softmax_contributions instead"
        )
    raise DataError(f"no DeepLIFT propagation for layer kind {layer.kind}")


def backpropagate(
    g: Graph,
    act: ActivationRecord,
    ref: ActivationRecord,
    rules: Mapping[int, str],
    target: Target,
    method: str = "deeplift",
    reference: str = "",
) -> AttributionResult:
    """Seed unit multipliers at ``target`` and walk the graph backwards."""
    p = target.position
    deltas = compute_deltas(g, act, ref, rules, upto=p)
    batch = act.batch_size
    seed = np.zeros((batch, int(np.prod(g.shapes[p]))))
    seed[:, target.index] = 1.0
    seed = seed.reshape((batch,) + g.shapes[p])
    state = MultiplierState(seed, seed.copy())
    for i in reversed(range(p)):
        x0 = np.broadcast_to(ref[i], act[i].shape)
        inp = LayerInput(act[i], x0, deltas.delta[i], deltas.delta_pos[i], deltas.delta_neg[i])
        state = _step(g, i, rules, inp, state)
    scores = state.m_pos * deltas.delta_pos[0] + state.m_neg * deltas.delta_neg[0]
    delta_t = deltas.delta[p].reshape(batch, -1)[:, target.index]
    if not act.batched:
        scores, delta_t = scores[0], float(delta_t[0])
    return AttributionResult(
        scores=scores,
        target=target.index,
        method=method,
        reference=reference,
        delta_t=delta_t,
        metadata={"rules": {str(k): v for k, v in sorted(rules.items()) if k < p}},
    )


def method_name(rules) -> str:
    if isinstance(rules, str):
        return f"deeplift-{rules}"
    return "deeplift-custom"


def _reference_batch(g, x, reference):
    xb, batched = as_batch(g, x)
    if reference is None:
        return xb, batched, np.zeros((1,) + g.input_shape)
    r = np.asarray(reference, dtype=np.float64)
    if r.shape == g.input_shape:
        return xb, batched, r[None]
    if r.shape == xb.shape:
        return xb, batched, r
    raise ReferenceMismatch(f"reference shape {r.shape} does not match input {x.shape}")


def deeplift(
    g: Graph,
    x,
    reference=None,
    rules: Union[str, Mapping[int, str]] = "rescale",
    target: int = 0,
    use_final: bool = False,
    reference_name: str = "",
) -> AttributionResult:
    """DeepLIFT scores for one input (or a batch) against one reference.

    ``reference`` defaults to all zeros and may be a single tensor or one
    per batch element.
    """
    xb, batched, rb = _reference_batch(g, x, reference)
    t = select_target(g, target, use_final)
    rule_map = as_rules(g, rules)
    act = forward(g, xb if batched else xb[0], upto=t.position)
    ref = forward(g, rb, upto=t.position)
    return backpropagate(
        g, act, ref, rule_map, t, method=method_name(rules), reference=reference_name or _describe(reference)
    )


def _describe(reference):
    if reference is None:
        return "zeros"
    r = np.asarray(reference)
    return "zeros" if not r.any() else "tensor"


def attribute_multi_reference(
    g: Graph,
    x,
    refs: Sequence,
    rules: Union[str, Mapping[int, str]] = "rescale",
    target: int = 0,
    use_final: bool = False,
    reference_name: str = "",
    attribute=None,
) -> AttributionResult:
    """Mean of the per-reference scores; ``delta_t`` is the mean change.

    ``attribute`` may be any callable with the signature of :func:`deeplift`
    minus ``rules`` (used to average baselines the same way).
    """
    if len(refs) == 0:
        raise ReferenceMismatch("at least one reference is required")
    results = []
    for r in refs:
        if attribute is None:
            results.append(deeplift(g, x, r, rules, target, use_final))
        else:
            results.append(attribute(g, x, r, target))
    scores = np.mean(np.stack([r.scores for r in results]), axis=0)
    delta_t = np.mean(np.stack([np.asarray(r.delta_t) for r in results]), axis=0)
    first = results[0]
    return AttributionResult(
        scores=scores,
        target=first.target,
        method=first.method,
        reference=reference_name or f"mean of {len(refs)} references",
        delta_t=float(delta_t) if np.ndim(delta_t) == 0 else delta_t,
        metadata={**first.metadata, "n_references": len(refs)},
    )


def normalize_softmax_contributions(per_class: Sequence[AttributionResult], n_classes: Optional[int] = None):
    """Subtract, per input element, the mean contribution across all classes."""
    if not per_class:
        raise DataError("no per-class results to normalize")
    if n_classes is not None and len(per_class) != n_classes:
        raise DataError(f"expected {n_classes} per-class results, got {len(per_class)}")
    shapes = {r.scores.shape for r in per_class}
    if len(shapes) != 1:
        raise ShapeMismatch(f"per-class score shapes differ: {shapes}")
    stacked = np.stack([r.scores for r in per_class])
    mean = stacked.mean(axis=0)
    return [
        AttributionResult(
            scores=r.scores - mean,
            target=r.target,
            method=r.method,
            reference=r.reference,
            delta_t=r.delta_t,
            metadata={**r.metadata, "softmax_normalized": True},
        )
        for r in per_class
    ]


def target_output(g: Graph, x, target: Target) -> np.ndarray:
    """Value of the target neuron for a batch ``x`` (shape ``(B,) + input``)."""
    act = forward(g, x, upto=target.position)
    return act[-1].reshape(act.batch_size, -1)[:, target.index]
