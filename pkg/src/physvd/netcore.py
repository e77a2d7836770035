"""A small sequential network of dense or low-rank factored linear layers
with elementwise activations.

Samples are rows: a batch ``X`` of shape ``(N, d_in)`` maps to
``Z = X W^T + b``. Single vectors are accepted everywhere and treated as a
batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, ContractError
from .losses import LossConfig, combined_loss_grad

ACTIVATIONS = ("identity", "tanh")


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    raise ContractError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "identity":
        return np.ones_like(z)
    raise ContractError(f"unknown activation {kind!r}")


def _vec_or_zeros(b, n: int) -> np.ndarray:
    return np.zeros(n) if b is None else np.asarray(b, dtype=np.float64).reshape(n)


@dataclass(frozen=True)
class LinearLayer:
    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str = "tanh"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2 or min(w.shape) < 1:
            raise ContractError(f"weight must be a nonempty matrix, got shape {w.shape}")
        b = _vec_or_zeros(self.bias, w.shape[0])
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ContractError("layer has non-finite entries")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def dense_weight(self) -> np.ndarray:
        return self.weight

    def linear(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias

    def budget_params(self) -> int:
        return self.d_out * self.d_in


@dataclass(frozen=True)
class FactoredLayer:
    """``W ~= left @ right``; rank 0 means the linear map is zero."""

    left: np.ndarray
    right: np.ndarray
    bias: np.ndarray | None = None
    activation: str = "tanh"

    def __post_init__(self):
        a = np.asarray(self.left, dtype=np.float64)
        b = np.asarray(self.right, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ContractError(f"factor shapes {a.shape} and {b.shape} do not chain")
        if a.shape[0] < 1 or b.shape[1] < 1:
            raise ContractError("factored layer needs d_out, d_in >= 1")
        bias = _vec_or_zeros(self.bias, a.shape[0])
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(bias))):
            raise ContractError("layer has non-finite entries")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "left", a)
        object.__setattr__(self, "right", b)
        object.__setattr__(self, "bias", bias)

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    @property
    def d_out(self) -> int:
        return self.left.shape[0]

    @property
    def d_in(self) -> int:
        return self.right.shape[1]

    @property
    def dense_weight(self) -> np.ndarray:
        return self.left @ self.right

    def linear(self, x: np.ndarray) -> np.ndarray:
        return (x @ self.right.T) @ self.left.T + self.bias

    def budget_params(self) -> int:
        return self.rank * (self.d_out + self.d_in)


Layer = Union[LinearLayer, FactoredLayer]


@dataclass(frozen=True)
class SequentialModel:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ContractError("model needs at least one layer")
        for i in range(len(layers) - 1):
            if layers[i].d_out != layers[i + 1].d_in:
                raise ContractError(
                    f"layer {i} output dim {layers[i].d_out} != layer {i + 1} input dim {layers[i + 1].d_in}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    def __len__(self) -> int:
        return len(self.layers)

    def __call__(self, x) -> np.ndarray:
        return forward(self, x).final_output


@dataclass(frozen=True)
class ForwardTrace:
    inputs_per_layer: list[np.ndarray]
    linear_outputs: list[np.ndarray]
    final_output: np.ndarray
    single: bool = field(default=False, repr=False)


@dataclass(frozen=True)
class GradTrace:
    z_grads: list[np.ndarray]


def make_mlp(
    widths: Sequence[int],
    activation: str = "tanh",
    seed=0,
    last_activation: str = "identity",
    bias_scale: float = 0.1,
) -> SequentialModel:
    """Random MLP with ``widths = (d_in, h_1, ..., d_out)`` and 1/sqrt(fan_in) weights."""
    if len(widths) < 2:
        raise ConfigError("widths needs at least input and output dims")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = last_activation if i == len(widths) - 2 else activation
        w = rng.standard_normal((b, a)) / np.sqrt(a)
        layers.append(LinearLayer(w, bias_scale * rng.standard_normal(b), act))
    return SequentialModel(tuple(layers))


def _as_batch(model: SequentialModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ContractError(f"input shape {x.shape} does not match model input dim {model.input_dim}")
    return x, single


def forward(model: SequentialModel, x) -> ForwardTrace:
    xb, single = _as_batch(model, x)
    inputs, outputs = [], []
    h = xb
    for layer in model.layers:
        inputs.append(h)
        z = layer.linear(h)
        outputs.append(z)
        h = activate(layer.activation, z)
    if single:
        return ForwardTrace([a[0] for a in inputs], [z[0] for z in outputs], h[0], True)
    return ForwardTrace(inputs, outputs, h, False)


def backward(model: SequentialModel, trace: ForwardTrace, target, loss_cfg: LossConfig) -> GradTrace:
    """Gradients of the per-sample combined loss w.r.t. each layer's linear output."""
    if loss_cfg.sobolev_scale > 0:
        c, h, w, _ = loss_cfg.grid
        if c * h * w != model.output_dim:
            raise ConfigError(
                f"loss grid {c}x{h}x{w} does not match model output dim {model.output_dim}"
            )
    single = trace.single
    zs = [z[None] for z in trace.linear_outputs] if single else trace.linear_outputs
    out = trace.final_output[None] if single else trace.final_output
    tgt = np.asarray(target, dtype=np.float64)
    tgt = tgt[None] if tgt.ndim == 1 else tgt
    if tgt.shape != out.shape:
        raise ContractError(f"target shape {tgt.shape} does not match output {out.shape}")
    upstream = combined_loss_grad(out, tgt, loss_cfg)
    grads: list[np.ndarray] = [None] * len(model.layers)  # type: ignore[list-item]
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        g = upstream * activation_grad(layer.activation, zs[i])
        grads[i] = g
        if i:
            upstream = g @ layer.dense_weight if isinstance(layer, LinearLayer) else (g @ layer.left) @ layer.right
    return GradTrace([g[0] for g in grads] if single else grads)


def weight_grads(model: SequentialModel, trace: ForwardTrace, grads: GradTrace):
    """Mean-over-batch gradients ``(dW, db)`` per dense layer."""
    out = []
    for x, g in zip(trace.inputs_per_layer, grads.z_grads):
        x2, g2 = np.atleast_2d(x), np.atleast_2d(g)
        out.append((g2.T @ x2 / x2.shape[0], g2.mean(axis=0)))
    return out


def replace_layer(model: SequentialModel, index: int, factored: FactoredLayer) -> SequentialModel:
    if not 0 <= index < len(model.layers):
        raise ContractError(f"layer index {index} out of range for {len(model.layers)} layers")
    old = model.layers[index]
    if (factored.d_out, factored.d_in) != (old.d_out, old.d_in):
        raise ContractError(
            f"replacement shape {(factored.d_out, factored.d_in)} != layer shape {(old.d_out, old.d_in)}"
        )
    layers = list(model.layers)
    layers[index] = factored
    return SequentialModel(tuple(layers))


def with_layer(model: SequentialModel, index: int, layer: Layer) -> SequentialModel:
    layers = list(model.layers)
    layers[index] = layer
    return SequentialModel(tuple(layers))


def param_count(model: SequentialModel) -> int:
    """Budgeted linear-map parameters; biases are excluded (see ``bias_count``)."""
    return sum(layer.budget_params() for layer in model.layers)


def bias_count(model: SequentialModel) -> int:
    return sum(layer.d_out for layer in model.layers)


def dense_params(model: SequentialModel) -> int:
    return sum(layer.d_out * layer.d_in for layer in model.layers)


def to_dense(layer: Layer) -> LinearLayer:
    if isinstance(layer, LinearLayer):
        return layer
    return LinearLayer(layer.dense_weight, layer.bias, layer.activation)
