"""Minimal supervised training: backprop weight gradients and SGD with momentum."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, Divergence, NonFinite, ShapeMismatch
from .graph import (
    LAYER_KINDS,
    Conv1D,
    Conv2D,
    Dense,
    Graph,
    MaxPool,
    Sigmoid,
    Softmax,
    forward,
)

LOSSES = ("softmax_xent", "multi_task_sigmoid_xent")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    loss: str = "softmax_xent"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise DataError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.seed < 0:
            raise DataError("batch_size must be >= 1, epochs and seed >= 0")
        if self.loss not in LOSSES:
            raise DataError(f"unknown loss {self.loss!r}")

    def to_dict(self):
        return asdict(self)


def logit_position(g: Graph, loss: str) -> int:
    """Position whose activations the loss treats as logits."""
    last = g.layers[-1]
    if (loss == "softmax_xent" and isinstance(last, Softmax)) or (
        loss == "multi_task_sigmoid_xent" and isinstance(last, Sigmoid)
    ):
        return len(g.layers) - 1
    return len(g.layers)


def _loss_and_grad(logits, labels, loss):
    batch = logits.shape[0]
    if loss == "softmax_xent":
        labels = np.asarray(labels)
        if labels.ndim == 1:
            onehot = np.zeros_like(logits)
            onehot[np.arange(batch), labels.astype(int)] = 1.0
        else:
            onehot = labels.astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        value = -np.sum(onehot * log_p) / batch
        return value, (np.exp(log_p) - onehot) / batch
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeMismatch(f"labels {y.shape} do not match logits {logits.shape}")
    per = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    sig = np.where(logits >= 0, 1 / (1 + np.exp(-np.abs(logits))), 1 - 1 / (1 + np.exp(-np.abs(logits))))
    return per.mean(), (sig - y) / y.size


def weight_gradients(g: Graph, inputs, labels, loss: str = "softmax_xent"):
    """Mean batch loss and its gradient for every parameterized layer.

    Returns ``(loss, grads)`` where ``grads[i]`` is ``(dW, db)`` for Dense and
    Conv layers and ``None`` for the rest.
    """
    if loss not in LOSSES:
        raise DataError(f"unknown loss {loss!r}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[1:] != g.input_shape:
        raise ShapeMismatch(f"batch {x.shape} does not match model input {g.input_shape}")
    p = logit_position(g, loss)
    act = forward(g, x, upto=p)
    value, grad = _loss_and_grad(act[p], labels, loss)
    if not np.isfinite(value):
        raise Divergence("non-finite loss")
    grads = [None] * len(g.layers)
    for i in reversed(range(p)):
        layer = g.layers[i]
        if isinstance(layer, (Dense, Conv1D, Conv2D)):
            grads[i] = layer.param_grads(act[i], grad)
        if i > 0:
            grad = layer.backward(act[i], act[i + 1], grad)
    return float(value), grads


def train(g: Graph, dataset, cfg: TrainConfig, log=None):
    """Fit ``g`` to ``dataset = (inputs, labels)``.

    Returns the trained graph and the mean training loss of every epoch.
    Raises :class:`Divergence` (carrying the history so far) on a
    non-finite loss.
    """
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0 or len(x) != len(y):
        raise DataError("dataset is empty or inputs/labels differ in length")
    params = {i: [np.array(l.weights), np.array(l.bias)] for i, l in enumerate(g.layers)
              if isinstance(l, (Dense, Conv1D, Conv2D))}
    velocity = {i: [np.zeros_like(w), np.zeros_like(b)] for i, (w, b) in params.items()}
    rng = np.random.default_rng(cfg.seed)
    history = []
    current = g
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total, seen = 0.0, 0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                value, grads = weight_gradients(current, x[idx], y[idx], cfg.loss)
            except (Divergence, NonFinite):
                raise Divergence(f"non-finite loss in epoch {epoch + 1}", history) from None
            with np.errstate(over="ignore", invalid="ignore"):
                _sgd_step(params, velocity, grads, cfg)
            current = _with_params(g, params)
            total += value * len(idx)
            seen += len(idx)
        history.append({"epoch": epoch + 1, "loss": total / seen})
        if log is not None:
            log(f"epoch {epoch + 1}: loss {total / seen:.5f}")
    return current, history


def _sgd_step(params, velocity, grads, cfg):
    for i, (dw, db) in ((i, gr) for i, gr in enumerate(grads) if gr is not None):
        vw, vb = velocity[i]
        vw *= cfg.momentum
        vw -= cfg.learning_rate * dw
        vb *= cfg.momentum
        vb -= cfg.learning_rate * db
        params[i][0] += vw
        params[i][1] += vb


def _with_params(g, params):
    layers = list(g.layers)
    for i, (w, b) in params.items():
        layers[i] = layers[i].with_params(w, b)
    return g.with_layers(layers)


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for row in history:
            writer.writerow([row["epoch"], repr(float(row["loss"]))])


# ----------------------------------------------------------- architectures


def init_graph(architecture, input_shape, seed: int = 0) -> Graph:
    """Build a graph from layer descriptions with He-style fan-in init."""
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(input_shape)
    for spec in architecture:
        kind = spec["kind"]
        if kind not in LAYER_KINDS:
            raise DataError(f"unknown layer kind {kind!r}")
        if kind == "Dense":
            fan_in = shape[0]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, spec["units"]))
            layer = Dense(w, np.zeros(spec["units"]))
        elif kind in ("Conv1D", "Conv2D"):
            rank = 1 if kind == "Conv1D" else 2
            ks = spec["kernel_size"]
            ks = (ks,) * rank if isinstance(ks, int) else tuple(ks)
            fan_in = int(np.prod(ks)) * shape[-1]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), ks + (shape[-1], spec["filters"]))
            layer = (Conv1D if rank == 1 else Conv2D)(w, np.zeros(spec["filters"]), spec.get("stride", 1))
        elif kind == "MaxPool":
            layer = MaxPool(spec.get("pool_size", 2), spec.get("stride"))
        else:
            layer = LAYER_KINDS[kind]()
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Graph(tuple(layers), tuple(input_shape))


def load_config(name_or_path) -> dict:
    """Load a shipped config (``genomic``, ``digits``) or a JSON file."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    try:
        text = resources.files("deeplift.data").joinpath(f"{name_or_path}.json").read_text()
    except FileNotFoundError:
        raise DataError(f"no shipped config named {name_or_path!r}") from None
    return json.loads(text)


def config_train(cfg: dict, **overrides) -> TrainConfig:
    values = dict(cfg["train"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


# --------------------------------------------------------------- metrics


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both positive and negative labels")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(g: Graph, x, labels, batch_size: int = 256) -> float:
    preds = predict_batches(g, x, batch_size).argmax(axis=1)
    return float(np.mean(preds == np.asarray(labels)))


def predict_batches(g: Graph, x, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    outs = [forward(g, x[s : s + batch_size]).values[-1] for s in range(0, len(x), batch_size)]
    return np.concatenate(outs)
