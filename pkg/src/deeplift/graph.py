"""Sequential feed-forward graphs: layers, forward pass, model files, references.

All layer methods work on batched arrays whose leading axis is the batch;
the public :func:`forward` also accepts a single unbatched example.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Optional

import numpy as np

from .errors import (
    FusedLayerError,
    ModelFormatError,
    NonFinite,
    ReferenceMismatch,
    ShapeChainError,
    ShapeMismatch,
    SoftmaxNotLast,
    WeightsTruncated,
)
from .tensor import check_finite

Shape = tuple


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


class Layer:
    kind: ClassVar[str] = ""
    affine: ClassVar[bool] = False
    nonlinear: ClassVar[bool] = False

    def output_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, x: np.ndarray, y: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product: gradient w.r.t. the layer input."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def config(self) -> dict:
        return {}


# ---------------------------------------------------------------- affine


class AffineLayer(Layer):
    """Layers of the form ``y = linear(x, W) + b``."""

    affine = True

    def linear(self, x, w):
        raise NotImplementedError

    def linear_t(self, g, w, in_shape):
        raise NotImplementedError

    def forward(self, x):
        return self.linear(x, self.weights) + self.bias

    def backward(self, x, y, grad):
        return self.linear_t(grad, self.weights, x.shape[1:])

    def param_grads(self, x, grad):
        raise NotImplementedError

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def with_params(self, weights, bias):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Dense(AffineLayer):
    """Fully connected layer; ``weights`` has shape (in, out)."""

    weights: np.ndarray
    bias: np.ndarray
    kind: ClassVar[str] = "Dense"

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "bias", _frozen(self.bias))
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeChainError(
                f"Dense weights {self.weights.shape} / bias {self.bias.shape} inconsistent"
            )

    @property
    def units(self) -> int:
        return self.weights.shape[1]

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.weights.shape[0],):
            raise ShapeChainError(f"Dense expects input ({self.weights.shape[0]},), got {in_shape}")
        return (self.units,)

    def linear(self, x, w):
        return x @ w

    def linear_t(self, g, w, in_shape):
        return g @ np.transpose(w)

    def param_grads(self, x, grad):
        return x.T @ grad, grad.sum(axis=0)

    def with_params(self, weights, bias):
        return Dense(weights, bias)

    def config(self):
        return {"units": self.units}


class _Conv(AffineLayer):
    rank: ClassVar[int] = 1

    def _check(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "bias", _frozen(self.bias))
        stride = self.stride
        if isinstance(stride, (int, np.integer)):
            stride = (int(stride),) * self.rank
        stride = tuple(int(s) for s in stride)
        object.__setattr__(self, "stride", stride)
        w = self.weights
        if w.ndim != self.rank + 2 or len(stride) != self.rank or min(stride) < 1:
            raise ShapeChainError(f"{self.kind}: bad kernel {w.shape} or stride {stride}")
        if self.bias.shape != (w.shape[-1],):
            raise ShapeChainError(f"{self.kind}: bias {self.bias.shape} does not match kernel {w.shape}")

    @property
    def kernel_size(self):
        return tuple(self.weights.shape[: self.rank])

    @property
    def filters(self):
        return self.weights.shape[-1]

    def output_shape(self, in_shape):
        in_shape = tuple(in_shape)
        if len(in_shape) != self.rank + 1 or in_shape[-1] != self.weights.shape[-2]:
            raise ShapeChainError(f"{self.kind} kernel {self.weights.shape} cannot take input {in_shape}")
        spatial = []
        for n, k, s in zip(in_shape[:-1], self.kernel_size, self.stride):
            if n < k:
                raise ShapeChainError(f"{self.kind}: input extent {n} smaller than kernel {k}")
            spatial.append((n - k) // s + 1)
        return tuple(spatial) + (self.filters,)

    def _windows(self, out_spatial):
        """Yield (kernel offset, input slice) for every kernel position."""
        for off in itertools.product(*(range(k) for k in self.kernel_size)):
            sl = tuple(
                slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, self.stride, out_spatial)
            )
            yield off, (slice(None),) + sl

    def linear(self, x, w):
        out_spatial = self.output_shape(x.shape[1:])[:-1]
        out = np.zeros((x.shape[0],) + out_spatial + (w.shape[-1],))
        for off, sl in self._windows(out_spatial):
            out += x[sl] @ w[off]
        return out

    def linear_t(self, g, w, in_shape):
        out_spatial = g.shape[1:-1]
        dx = np.zeros((g.shape[0],) + tuple(in_shape))
        for off, sl in self._windows(out_spatial):
            dx[sl] += g @ np.transpose(w[off])
        return dx

    def param_grads(self, x, grad):
        out_spatial = grad.shape[1:-1]
        dw = np.zeros(self.weights.shape)
        axes = list(range(grad.ndim - 1))
        for off, sl in self._windows(out_spatial):
            dw[off] = np.tensordot(x[sl], grad, axes=(axes, axes))
        return dw, grad.sum(axis=tuple(axes))

    def with_params(self, weights, bias):
        return type(self)(weights, bias, self.stride)

    def config(self):
        ks = self.kernel_size
        st = self.stride
        if self.rank == 1:
            ks, st = ks[0], st[0]
        else:
            ks, st = list(ks), list(st)
        return {"filters": self.filters, "kernel_size": ks, "stride": st, "padding": "valid"}


@dataclass(frozen=True, eq=False)
class Conv1D(_Conv):
    """Valid 1-D convolution over (length, channels); kernel (K, Cin, Cout)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: object = 1
    kind: ClassVar[str] = "Conv1D"
    rank: ClassVar[int] = 1

    def __post_init__(self):
        self._check()


@dataclass(frozen=True, eq=False)
class Conv2D(_Conv):
    """Valid 2-D convolution over (H, W, channels); kernel (KH, KW, Cin, Cout)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: object = 1
    kind: ClassVar[str] = "Conv2D"
    rank: ClassVar[int] = 2

    def __post_init__(self):
        self._check()


@dataclass(frozen=True, eq=False)
class GlobalAvgPool(AffineLayer):
    """Mean over every axis but the channel axis.

    Treated as affine with a single positive scalar weight so the Linear rule
    applies unchanged.
    """

    kind: ClassVar[str] = "GlobalAvgPool"
    weights: np.ndarray = field(default_factory=lambda: _frozen(1.0))
    bias: np.ndarray = field(default_factory=lambda: _frozen(0.0))

    def output_shape(self, in_shape):
        if len(in_shape) < 2:
            raise ShapeChainError(f"GlobalAvgPool needs a spatial axis, got {in_shape}")
        return (in_shape[-1],)

    def linear(self, x, w):
        return w * x.mean(axis=tuple(range(1, x.ndim - 1)))

    def linear_t(self, g, w, in_shape):
        n = int(np.prod(in_shape[:-1]))
        expanded = g.reshape((g.shape[0],) + (1,) * (len(in_shape) - 1) + (g.shape[-1],))
        return np.broadcast_to(w * expanded / n, (g.shape[0],) + tuple(in_shape)).copy()

    def params(self):
        return {}


# ---------------------------------------------------------- nonlinearities


class Activation(Layer):
    """Single-input elementwise nonlinearity."""

    nonlinear = True

    def fn(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def forward(self, x):
        return self.fn(x)

    def backward(self, x, y, grad):
        return grad * self.deriv(x)


@dataclass(frozen=True, eq=False)
class ReLU(Activation):
    kind: ClassVar[str] = "ReLU"

    def fn(self, x):
        return np.maximum(x, 0.0)

    def deriv(self, x):
        # derivative at the kink taken as 0
        return (np.asarray(x) > 0).astype(np.float64)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True, eq=False)
class Sigmoid(Activation):
    kind: ClassVar[str] = "Sigmoid"

    def fn(self, x):
        return _sigmoid(x)

    def deriv(self, x):
        s = _sigmoid(x)
        return s * (1.0 - s)


@dataclass(frozen=True, eq=False)
class Tanh(Activation):
    kind: ClassVar[str] = "Tanh"

    def fn(self, x):
        return np.tanh(x)

    def deriv(self, x):
        return 1.0 - np.tanh(x) ** 2


@dataclass(frozen=True, eq=False)
class Softmax(Layer):
    """Softmax over a rank-1 output; only allowed as the final layer."""

    kind: ClassVar[str] = "Softmax"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeChainError(f"Softmax expects a vector, got {in_shape}")
        return in_shape

    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def backward(self, x, y, grad):
        return y * (grad - (grad * y).sum(axis=-1, keepdims=True))


# -------------------------------------------------------------- structural


@dataclass(frozen=True, eq=False)
class Flatten(Layer):
    kind: ClassVar[str] = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, y, grad):
        return grad.reshape(x.shape)


@dataclass(frozen=True, eq=False)
class MaxPool(Layer):
    """Valid max pooling over the spatial axes of (..., channels) inputs.

    Attribution routes multipliers to the window winner only, the same way a
    gradient would; this is an approximation, not a DeepLIFT rule.
    """

    pool_size: object = 2
    stride: object = None
    kind: ClassVar[str] = "MaxPool"

    def _geometry(self, in_shape):
        rank = len(in_shape) - 1
        if rank < 1:
            raise ShapeChainError(f"MaxPool needs a spatial axis, got {in_shape}")
        pool = self.pool_size
        pool = (int(pool),) * rank if isinstance(pool, (int, np.integer)) else tuple(pool)
        stride = pool if self.stride is None else self.stride
        stride = (int(stride),) * rank if isinstance(stride, (int, np.integer)) else tuple(stride)
        if len(pool) != rank or len(stride) != rank:
            raise ShapeChainError(f"MaxPool geometry {pool}/{stride} does not fit input {in_shape}")
        return pool, stride

    def output_shape(self, in_shape):
        pool, stride = self._geometry(in_shape)
        out = []
        for n, p, s in zip(in_shape[:-1], pool, stride):
            if n < p:
                raise ShapeChainError(f"MaxPool window {p} larger than extent {n}")
            out.append((n - p) // s + 1)
        return tuple(out) + (in_shape[-1],)

    def _stack(self, x):
        pool, stride = self._geometry(x.shape[1:])
        out_spatial = self.output_shape(x.shape[1:])[:-1]
        slices = []
        for off in itertools.product(*(range(p) for p in pool)):
            slices.append(
                (slice(None),)
                + tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, stride, out_spatial))
            )
        return slices, np.stack([x[sl] for sl in slices])

    def forward(self, x):
        _, stacked = self._stack(x)
        return stacked.max(axis=0)

    def route(self, x, grad):
        """Scatter ``grad`` back to the first maximal element of each window."""
        slices, stacked = self._stack(x)
        winner = stacked.argmax(axis=0)
        dx = np.zeros_like(x)
        for k, sl in enumerate(slices):
            dx[sl] += np.where(winner == k, grad, 0.0)
        return dx

    def backward(self, x, y, grad):
        return self.route(x, grad)

    def config(self):
        cfg = {"pool_size": self.pool_size}
        if self.stride is not None:
            cfg["stride"] = self.stride
        return cfg


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Dense, Conv1D, Conv2D, ReLU, Sigmoid, Tanh, Softmax, GlobalAvgPool, Flatten, MaxPool)
}


# ------------------------------------------------------------------- graph


@dataclass(frozen=True, eq=False)
class Graph:
    layers: tuple
    input_shape: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if not layers:
            raise ShapeChainError("graph has no layers")
        for i, layer in enumerate(layers):
            if isinstance(layer, Softmax) and i != len(layers) - 1:
                raise SoftmaxNotLast(f"Softmax at layer {i} of {len(layers)}")
        shapes = [self.input_shape]
        for i, layer in enumerate(layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeChainError as exc:
                raise ShapeChainError(f"layer {i} ({layer.kind}): {exc}") from None
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def output_shape(self):
        return self.shapes[-1]

    def __len__(self):
        return len(self.layers)

    def with_layers(self, layers):
        return Graph(tuple(layers), self.input_shape)


@dataclass(frozen=True)
class ActivationRecord:
    """Activations at every position: ``values[0]`` is the input, ``values[i]``
    the output of layer ``i - 1``. Arrays always carry a leading batch axis."""

    values: tuple
    batched: bool

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def unbatched(self, i):
        v = self.values[i]
        return v if self.batched else v[0]

    @property
    def output(self):
        return self.unbatched(-1)

    @property
    def batch_size(self):
        return self.values[0].shape[0]


def as_batch(g: Graph, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == g.input_shape:
        return x[None].copy(), False
    if x.shape[1:] == g.input_shape:
        return np.ascontiguousarray(x), True
    raise ShapeMismatch(f"input shape {x.shape} does not match model input {g.input_shape}")


def forward(g: Graph, x, upto: Optional[int] = None) -> ActivationRecord:
    batch, batched = as_batch(g, x)
    check_finite(batch, "input")
    values = [batch]
    stop = len(g.layers) if upto is None else upto
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(g.layers[:stop]):
            out = layer.forward(values[-1])
            check_finite(out, f"output of layer {i} ({layer.kind})")
            values.append(out)
    return ActivationRecord(tuple(values), batched)


def reference_forward(g: Graph, reference) -> ActivationRecord:
    """Reference activations for every neuron, by the same forward semantics."""
    return forward(g, reference)


def predict(g: Graph, x) -> np.ndarray:
    return forward(g, x).output


# ------------------------------------------------------------- model files

MODEL_VERSION = 1


def _expected_param_shapes(kind, entry, in_shape):
    if kind == "Dense":
        units = int(entry["units"])
        if len(in_shape) != 1:
            raise ShapeChainError(f"Dense needs a vector input, got {in_shape}")
        return (in_shape[0], units), (units,)
    if kind in ("Conv1D", "Conv2D"):
        rank = 1 if kind == "Conv1D" else 2
        ks = entry["kernel_size"]
        ks = (int(ks),) * rank if isinstance(ks, int) else tuple(int(k) for k in ks)
        if len(in_shape) != rank + 1:
            raise ShapeChainError(f"{kind} cannot take input {in_shape}")
        return ks + (in_shape[-1], int(entry["filters"])), (int(entry["filters"]),)
    return None, None


def load_model(manifest_bytes: bytes, weights_bytes: bytes) -> Graph:
    """Parse a manifest + little-endian float32 weights blob into a Graph."""
    try:
        manifest = json.loads(manifest_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("version") != MODEL_VERSION:
        raise ModelFormatError("manifest must be an object with version 1")
    try:
        input_shape = tuple(int(s) for s in manifest["input_shape"])
        entries = list(manifest["layers"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"manifest missing input_shape/layers: {exc}") from None
    if not input_shape or min(input_shape) < 1:
        raise ModelFormatError(f"bad input_shape {input_shape}")

    blob = np.frombuffer(weights_bytes[: len(weights_bytes) // 4 * 4], dtype="<f4")
    n_floats = blob.size

    def take(entry, prefix, shape, i):
        try:
            off, n = int(entry[f"{prefix}_offset"]), int(entry[f"{prefix}_len"])
        except (KeyError, TypeError, ValueError):
            raise ModelFormatError(f"layer {i}: missing {prefix}_offset/{prefix}_len") from None
        if n != int(np.prod(shape)):
            raise ShapeChainError(f"layer {i}: {prefix}_len {n} does not match shape {shape}")
        if off < 0 or off + n > n_floats:
            raise WeightsTruncated(
                f"layer {i}: {prefix} range [{off}, {off + n}) exceeds {n_floats} floats"
            )
        values = blob[off : off + n].astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(values)):
            raise NonFinite(f"layer {i}: non-finite {prefix}")
        return values

    layers = []
    shape = input_shape
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or entry.get("kind") not in LAYER_KINDS:
            raise ModelFormatError(f"layer {i}: unknown kind {entry!r}")
        kind = entry["kind"]
        if entry.get("activation") not in (None, "linear"):
            raise FusedLayerError(f"layer {i}: fused activation {entry['activation']!r}")
        if entry.get("padding", "valid") != "valid":
            raise ModelFormatError(f"layer {i}: only valid padding is supported")
        try:
            w_shape, b_shape = _expected_param_shapes(kind, entry, shape)
            if kind == "Dense":
                layer = Dense(take(entry, "weight", w_shape, i), take(entry, "bias", b_shape, i))
            elif kind in ("Conv1D", "Conv2D"):
                cls = Conv1D if kind == "Conv1D" else Conv2D
                layer = cls(
                    take(entry, "weight", w_shape, i),
                    take(entry, "bias", b_shape, i),
                    entry.get("stride", 1),
                )
            elif kind == "MaxPool":
                layer = MaxPool(_as_geom(entry.get("pool_size", 2)), _as_geom(entry.get("stride")))
            else:
                layer = LAYER_KINDS[kind]()
            shape = tuple(layer.output_shape(shape))
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"layer {i} ({kind}): bad parameters: {exc}") from None
        layers.append(layer)
    graph = Graph(tuple(layers), input_shape)
    if len(weights_bytes) % 4:
        raise ModelFormatError("weights blob length is not a multiple of 4 bytes")
    return graph


def _as_geom(v):
    if v is None or isinstance(v, int):
        return v
    return tuple(int(s) for s in v)


def save_model(g: Graph) -> tuple[bytes, bytes]:
    """Serialize to (manifest bytes, weights bytes), narrowing to float32."""
    chunks = []
    offset = 0
    entries = []
    for layer in g.layers:
        entry = {"kind": layer.kind}
        entry.update(layer.config())
        if isinstance(layer, (Dense, _Conv)):
            for prefix, arr in (("weight", layer.weights), ("bias", layer.bias)):
                flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
                entry[f"{prefix}_offset"] = offset
                entry[f"{prefix}_len"] = int(flat.size)
                offset += flat.size
                chunks.append(flat.tobytes())
        entries.append(entry)
    manifest = {"version": MODEL_VERSION, "input_shape": list(g.input_shape), "layers": entries}
    return (json.dumps(manifest, indent=2) + "\n").encode("utf-8"), b"".join(chunks)


def weights_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def write_model(g: Graph, manifest_path) -> str:
    """Write ``<stem>.json`` + ``<stem>.bin``; returns the model hash."""
    manifest_bytes, weights_bytes = save_model(g)
    path = Path(manifest_path)
    path.write_bytes(manifest_bytes)
    weights_path(path).write_bytes(weights_bytes)
    return model_hash(manifest_bytes, weights_bytes)


def read_model(manifest_path) -> tuple[Graph, str]:
    path = Path(manifest_path)
    manifest_bytes = path.read_bytes()
    weights_bytes = weights_path(path).read_bytes() if weights_path(path).exists() else b""
    return load_model(manifest_bytes, weights_bytes), model_hash(manifest_bytes, weights_bytes)


def model_hash(manifest_bytes: bytes, weights_bytes: bytes) -> str:
    h = hashlib.sha256()
    h.update(manifest_bytes)
    h.update(weights_bytes)
    return h.hexdigest()


# -------------------------------------------------------------- references


@dataclass(frozen=True)
class ReferenceSpec:
    """How to build reference inputs: zeros, constant, file, or shuffle."""

    kind: str
    values: Optional[tuple] = None
    tensor: Optional[np.ndarray] = None
    k: int = 1
    path: Optional[str] = None

    @classmethod
    def parse(cls, text: str, loader=None) -> "ReferenceSpec":
        """Parse ``zeros``, ``constant:v1,v2,..``, ``file:PATH`` or ``shuffle:K``."""
        head, _, rest = text.partition(":")
        if head == "zeros" and not rest:
            return cls("zeros")
        if head == "constant" and rest:
            try:
                return cls("constant", values=tuple(float(v) for v in rest.split(",")))
            except ValueError:
                raise ReferenceMismatch(f"bad constant reference {text!r}") from None
        if head == "shuffle" and rest:
            try:
                k = int(rest)
            except ValueError:
                raise ReferenceMismatch(f"bad shuffle count in {text!r}") from None
            if k < 1:
                raise ReferenceMismatch("shuffle count must be >= 1")
            return cls("shuffle", k=k)
        if head == "file" and rest:
            if loader is None:
                raise ReferenceMismatch("file references need a tensor loader")
            return cls("file", tensor=np.asarray(loader(rest), dtype=np.float64), path=rest)
        raise ReferenceMismatch(f"unknown reference spec {text!r}")

    def describe(self) -> str:
        if self.kind == "constant":
            return "constant:" + ",".join(repr(v) for v in self.values)
        if self.kind == "shuffle":
            return f"shuffle:{self.k}"
        if self.kind == "file":
            return f"file:{self.path}"
        return self.kind


def resolve_reference(spec: ReferenceSpec, x, rng_seed: int = 0) -> list:
    """Materialize the reference tensors for a single (unbatched) input."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "zeros":
        return [np.zeros_like(x)]
    if spec.kind == "constant":
        vals = np.asarray(spec.values, dtype=np.float64)
        if vals.size == 1:
            return [np.full_like(x, vals[0])]
        if x.ndim == 0 or vals.size != x.shape[-1]:
            raise ReferenceMismatch(
                f"constant of length {vals.size} does not match input channel extent {x.shape}"
            )
        return [np.broadcast_to(vals, x.shape).copy()]
    if spec.kind == "file":
        ref = np.asarray(spec.tensor, dtype=np.float64)
        if ref.size != x.size:
            raise ReferenceMismatch(f"reference file has {ref.size} values, input has {x.size}")
        return [ref.reshape(x.shape).copy()]
    if spec.kind == "shuffle":
        if x.ndim != 2:
            raise ReferenceMismatch(f"shuffle references need a (length, channels) input, got {x.shape}")
        rng = np.random.default_rng(rng_seed)
        refs, seen = [], set()
        attempts = 0
        while len(refs) < spec.k:
            perm = rng.permutation(x.shape[0])
            key = perm.tobytes()
            attempts += 1
            if key in seen and attempts < 100 * spec.k:
                continue
            seen.add(key)
            refs.append(x[perm].copy())
        return refs
    raise ReferenceMismatch(f"unknown reference kind {spec.kind!r}")
