"""Closed model zoo: linear softmax classifier, dense tanh networks, and a
small convolutional net with batch normalization.

Architectures are named by spec strings with the grammar
``name["[" int ("-" int)* "]"]``:

* ``linear[IN-OUT]`` (or bare ``linear`` with dims passed by the caller),
* ``mlp[D0-D1-...-DK]``, tanh hidden layers, softmax cross-entropy loss,
* ``tinyconv[C]`` or ``tinyconv[C-CLASSES]`` on fixed 1x8x8 inputs.

A model is immutable apart from its batch-norm statistics, which are only
replaced wholesale by :func:`recompute_bn_stats`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, Minibatch
from .errors import ConfigError, DivergenceError
from .params import ParameterVector, Segment
from .rng import RngStream

TINYCONV_INPUT_SHAPE = (1, 8, 8)
BN_EPS = 1e-5


@dataclass(frozen=True)
class DenseLayer:
    name: str
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class ConvLayer:
    name: str
    in_ch: int
    out_ch: int
    ksize: int
    stride: int
    bias: bool = True


@dataclass(frozen=True)
class BatchNormLayer:
    name: str
    channels: int
    eps: float = BN_EPS


@dataclass(frozen=True)
class ActivationLayer:
    kind: str  # "tanh" or "relu"


@dataclass(frozen=True)
class FlattenLayer:
    pass


@dataclass
class BatchNormState:
    """Frozen per-layer statistics used by eval-mode forward passes.

    ``count`` is the number of training examples the statistics were
    computed from; 0 means the initial identity statistics (mean 0, var 1).
    """

    means: dict[str, np.ndarray] = field(default_factory=dict)
    variances: dict[str, np.ndarray] = field(default_factory=dict)
    count: int = 0


@dataclass
class Gradient:
    """Mean gradient of the per-example losses over one minibatch."""

    values: np.ndarray
    batch_size: int


class Model:
    """Architecture, parameter layout and metric kind for one network."""

    def __init__(self, arch, layers, segments, input_shape, n_classes, metric="accuracy"):
        if metric not in ("accuracy", "f1_macro", "none"):
            raise ConfigError(f"unknown metric kind {metric!r}")
        self.arch = arch
        self.layers = tuple(layers)
        self.segments = tuple(segments)
        self.input_shape = tuple(input_shape)
        self.n_classes = int(n_classes)
        self.metric = metric
        self.bn_state = _identity_bn_state(self.layers)

    @property
    def input_dim(self) -> int:
        d = 1
        for n in self.input_shape:
            d *= n
        return d

    @property
    def param_count(self) -> int:
        return self.segments[-1].stop if self.segments else 0

    @property
    def has_batch_norm(self) -> bool:
        return any(isinstance(layer, BatchNormLayer) for layer in self.layers)

    def __repr__(self) -> str:
        return f"Model({self.arch!r}, d={self.param_count}, metric={self.metric!r})"


def _identity_bn_state(layers) -> BatchNormState:
    state = BatchNormState()
    for layer in layers:
        if isinstance(layer, BatchNormLayer):
            state.means[layer.name] = np.zeros(layer.channels)
            state.variances[layer.name] = np.ones(layer.channels)
    return state


_SPEC_RE = re.compile(r"^([a-z][a-z0-9]*)(?:\[(\d+(?:-\d+)*)\])?$")


def parse_arch(spec: str) -> tuple[str, list[int]]:
    """Split an architecture spec string into (name, ints)."""
    m = _SPEC_RE.match(spec.strip())
    if not m:
        raise ConfigError(f"malformed architecture spec {spec!r}")
    name = m.group(1)
    ints = [int(tok) for tok in m.group(2).split("-")] if m.group(2) else []
    return name, ints


def _conv_out(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


def build_model(
    spec: str,
    rng: RngStream,
    *,
    input_dim: int | None = None,
    n_classes: int | None = None,
    metric: str = "accuracy",
) -> tuple[Model, ParameterVector]:
    """Instantiate a registered architecture with seeded initial parameters.

    Weights use a uniform fan-in bound sqrt(6/fan_in) and biases
    1/sqrt(fan_in); batch-norm scales start at 1 and shifts at 0. The draw
    order is fixed, so the same stream always yields identical parameters.
    """
    name, ints = parse_arch(spec)
    if any(v <= 0 for v in ints):
        raise ConfigError(f"architecture {spec!r} has non-positive widths")

    layers: list = []
    if name == "linear":
        if len(ints) == 2:
            in_dim, out_dim = ints
        elif not ints and input_dim and n_classes:
            in_dim, out_dim = input_dim, n_classes
        else:
            raise ConfigError("linear needs dims, e.g. linear[2-2], or explicit input_dim/n_classes")
        layers.append(DenseLayer("fc1", in_dim, out_dim))
        input_shape: tuple[int, ...] = (in_dim,)
        classes = out_dim
    elif name == "mlp":
        if len(ints) < 2:
            raise ConfigError("mlp spec needs at least input and output widths, e.g. mlp[2-8-2]")
        for i in range(len(ints) - 1):
            layers.append(DenseLayer(f"fc{i + 1}", ints[i], ints[i + 1]))
            if i < len(ints) - 2:
                layers.append(ActivationLayer("tanh"))
        input_shape = (ints[0],)
        classes = ints[-1]
    elif name == "tinyconv":
        if len(ints) not in (1, 2):
            raise ConfigError("tinyconv spec is tinyconv[C] or tinyconv[C-CLASSES]")
        ch = ints[0]
        classes = ints[1] if len(ints) == 2 else (n_classes or 2)
        c_in, h, w = TINYCONV_INPUT_SHAPE
        # no bias on conv1: the batch-norm layer right after cancels it
        layers.append(ConvLayer("conv1", c_in, ch, ksize=3, stride=1, bias=False))
        layers.append(BatchNormLayer("bn1", ch))
        layers.append(ActivationLayer("tanh"))
        h, w = _conv_out(h, 3, 1), _conv_out(w, 3, 1)
        layers.append(ConvLayer("conv2", ch, ch, ksize=3, stride=2))
        layers.append(ActivationLayer("tanh"))
        h, w = _conv_out(h, 3, 2), _conv_out(w, 3, 2)
        layers.append(FlattenLayer())
        layers.append(DenseLayer("fc1", ch * h * w, classes))
        input_shape = TINYCONV_INPUT_SHAPE
    else:
        raise ConfigError(f"unknown architecture {name!r} (known: linear, mlp, tinyconv)")

    segments: list[Segment] = []
    offset = 0

    def put(seg_name: str, shape: tuple[int, ...]) -> None:
        nonlocal offset
        seg = Segment(seg_name, offset, shape)
        segments.append(seg)
        offset = seg.stop

    for layer in layers:
        if isinstance(layer, DenseLayer):
            put(f"{layer.name}.weight", (layer.out_dim, layer.in_dim))
            put(f"{layer.name}.bias", (layer.out_dim,))
        elif isinstance(layer, ConvLayer):
            put(f"{layer.name}.weight", (layer.out_ch, layer.in_ch, layer.ksize, layer.ksize))
            if layer.bias:
                put(f"{layer.name}.bias", (layer.out_ch,))
        elif isinstance(layer, BatchNormLayer):
            put(f"{layer.name}.gamma", (layer.channels,))
            put(f"{layer.name}.beta", (layer.channels,))

    values = np.zeros(offset)
    gen = rng.generator()
    for layer in layers:
        if isinstance(layer, (DenseLayer, ConvLayer)):
            if isinstance(layer, DenseLayer):
                fan_in = layer.in_dim
            else:
                fan_in = layer.in_ch * layer.ksize * layer.ksize
            w_bound = np.sqrt(6.0 / fan_in)
            w_seg = next(s for s in segments if s.name == f"{layer.name}.weight")
            values[w_seg.offset : w_seg.stop] = gen.uniform(-w_bound, w_bound, w_seg.size)
            if not isinstance(layer, ConvLayer) or layer.bias:
                b_bound = 1.0 / np.sqrt(fan_in)
                b_seg = next(s for s in segments if s.name == f"{layer.name}.bias")
                values[b_seg.offset : b_seg.stop] = gen.uniform(-b_bound, b_bound, b_seg.size)
        elif isinstance(layer, BatchNormLayer):
            g_seg = next(s for s in segments if s.name == f"{layer.name}.gamma")
            values[g_seg.offset : g_seg.stop] = 1.0

    model = Model(spec, layers, segments, input_shape, classes, metric)
    return model, ParameterVector(values, segments)


def _batch_arrays(model: Model, batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Minibatch):
        x, y = batch.inputs, batch.labels
    else:
        x, y = batch
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("batch inputs must be a non-empty (B, D) matrix")
    if x.shape[1] != model.input_dim:
        raise ValueError(
            f"batch feature dim {x.shape[1]} does not match model input dim {model.input_dim}"
        )
    if y.shape != (x.shape[0],):
        raise ValueError("batch labels must be a length-B vector")
    return x, y


def _forward_graph(model: Model, params: ParameterVector, x: np.ndarray, bn_mode: str):
    """Build the graph from inputs to logits.

    Returns (logits tensor, parameter leaf tensors keyed by segment name,
    batch-norm statistics per layer when bn_mode == 'train').
    """
    if params.segments != model.segments:
        raise ValueError("parameter layout does not match the model")
    leaves = {seg.name: ad.Tensor(params.segment_array(seg.name)) for seg in model.segments}
    h = ad.Tensor(x.reshape((x.shape[0],) + model.input_shape))
    bn_stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for layer in model.layers:
        if isinstance(layer, DenseLayer):
            w = leaves[f"{layer.name}.weight"]
            b = leaves[f"{layer.name}.bias"]
            h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        elif isinstance(layer, ConvLayer):
            w = leaves[f"{layer.name}.weight"]
            b = leaves[f"{layer.name}.bias"] if layer.bias else None
            h = ad.conv2d(h, w, b, stride=layer.stride)
        elif isinstance(layer, BatchNormLayer):
            gamma = leaves[f"{layer.name}.gamma"]
            beta = leaves[f"{layer.name}.beta"]
            if bn_mode == "train":
                h, mean_, var_ = ad.batch_norm_train(h, gamma, beta, eps=layer.eps)
                bn_stats[layer.name] = (mean_, var_)
            else:
                h = ad.batch_norm_eval(
                    h,
                    gamma,
                    beta,
                    model.bn_state.means[layer.name],
                    model.bn_state.variances[layer.name],
                    eps=layer.eps,
                )
        elif isinstance(layer, ActivationLayer):
            h = ad.tanh(h) if layer.kind == "tanh" else ad.relu(h)
        elif isinstance(layer, FlattenLayer):
            h = ad.reshape(h, (h.shape[0], -1))
    return h, leaves, bn_stats


def forward(model: Model, params: ParameterVector, batch, *, bn_mode: str = "eval"):
    """Per-example losses and logits for one batch.

    The mean of the losses over a full pass of a dataset is the empirical
    risk of ``params`` on that dataset. Raises DivergenceError if any loss
    is non-finite.
    """
    x, y = _batch_arrays(model, batch)
    logits, _, _ = _forward_graph(model, params, x, bn_mode)
    losses = ad.softmax_cross_entropy(logits, y)
    if not np.all(np.isfinite(losses.value)):
        raise DivergenceError("non-finite loss in forward pass")
    return losses.value, logits.value


def gradient(model: Model, params: ParameterVector, batch, *, bn_mode: str = "train") -> Gradient:
    """Mean gradient of the batch loss, by reverse-mode differentiation.

    Deterministic in (params, batch); raises DivergenceError on non-finite
    losses or gradients so optimizer state is never poisoned silently.
    """
    x, y = _batch_arrays(model, batch)
    logits, leaves, _ = _forward_graph(model, params, x, bn_mode)
    losses = ad.softmax_cross_entropy(logits, y)
    if not np.all(np.isfinite(losses.value)):
        raise DivergenceError("non-finite loss in forward pass")
    loss = ad.mean(losses)
    ad.backward(loss)
    flat = np.zeros(model.param_count)
    for seg in model.segments:
        g = leaves[seg.name].grad
        if g is not None:
            flat[seg.offset : seg.stop] = g.reshape(-1)
    if not np.all(np.isfinite(flat)):
        raise DivergenceError("non-finite gradient in backward pass")
    return Gradient(flat, x.shape[0])


def recompute_bn_stats(model: Model, params: ParameterVector, dataset: Dataset, split: str = "train") -> BatchNormState:
    """Replace frozen batch-norm statistics with exact full-split statistics.

    Runs one forward pass over the whole split in train mode (the split is
    treated as a single batch), captures every layer's batch mean and
    population variance under the frozen parameters, and installs them as
    the new eval-mode statistics. Models without batch norm return an empty
    state and are untouched. Idempotent for fixed (params, dataset).
    """
    if not model.has_batch_norm:
        return BatchNormState()
    idx = dataset.split_indices(split)
    if idx.size == 0:
        raise ValueError(f"cannot recompute statistics from empty split {split!r}")
    x = dataset.inputs[idx]
    if x.shape[1] != model.input_dim:
        raise ValueError("dataset feature dim does not match model input dim")
    _, _, bn_stats = _forward_graph(model, params, x, bn_mode="train")
    state = BatchNormState(
        means={k: v[0].copy() for k, v in bn_stats.items()},
        variances={k: v[1].copy() for k, v in bn_stats.items()},
        count=int(idx.size),
    )
    model.bn_state = state
    return state


def predictions(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=1)


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred == labels))


def f1_macro(pred: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Macro-averaged F1 over all model classes; undefined classes score 0."""
    scores = []
    for c in range(n_classes):
        tp = np.sum((pred == c) & (labels == c))
        fp = np.sum((pred == c) & (labels != c))
        fn = np.sum((pred != c) & (labels == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def metric_value(model: Model, pred: np.ndarray, labels: np.ndarray) -> float:
    """Task metric for predictions; metrics never read loss values."""
    if model.metric == "accuracy":
        return accuracy(pred, labels)
    if model.metric == "f1_macro":
        return f1_macro(pred, labels, model.n_classes)
    return float("nan")


def evaluate(model: Model, params: ParameterVector, dataset: Dataset, split: str) -> tuple[float, float]:
    """(mean loss, metric) of ``params`` on one whole split, in eval mode."""
    idx = dataset.split_indices(split)
    if idx.size == 0:
        raise ValueError(f"evaluation split {split!r} is empty")
    losses, logits = forward(model, params, (dataset.inputs[idx], dataset.labels[idx]))
    return float(losses.mean()), metric_value(model, predictions(logits), dataset.labels[idx])
