"""Sequential networks built from four layer types.

Layers expose ``forward(x, mode)`` / ``backward(grad_out)``; parameter
gradients accumulate (+=) until ``zero_grads`` so callers can extract
per-sample gradients by running batches of one. A layer's forward cache is
valid only between a Train-mode forward and its matching backward; calling
backward twice, or after an Eval forward (batchnorm excepted), is a state
error.

Checkpoint format (``save_checkpoint`` / ``load_checkpoint``): a JSON
document ``{"format": "gradlab-checkpoint", "version": 1, "layers": [...]}``
where each layer entry carries its kind, hyperparameters, and parameter
payloads as base64 of little-endian float64 bytes. Round-trips are
bit-exact.
"""

from __future__ import annotations

import base64
import enum
import json
from typing import Optional

import numpy as np

from . import activations as act
from .errors import DomainError, FormatError, ShapeError, StateError
from .numcore import RngStream, bernoulli_mask, gaussian_init, matmul

__all__ = [
    "ActivationLayer",
    "BatchNormLayer",
    "DenseLayer",
    "DropoutLayer",
    "Mode",
    "Network",
    "build_mlp",
    "load_checkpoint",
    "save_checkpoint",
]


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class Layer:
    """Base: a forward/backward unit; parameter-free by default."""

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> list[np.ndarray]:
        return []

    def gradients(self) -> list[np.ndarray]:
        return []

    def zero_grads(self) -> None:
        for g in self.gradients():
            g[...] = 0.0


class DenseLayer(Layer):
    """Affine map z = x W + b; the outputs are the "nets" the probes record."""

    def __init__(self, w: np.ndarray, b: Optional[np.ndarray] = None):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"dense weight must be 2-D, got shape {w.shape}")
        self.w = w
        self.b = (
            np.zeros((1, w.shape[1])) if b is None else np.asarray(b, dtype=np.float64).reshape(1, -1)
        )
        if self.b.shape[1] != w.shape[1]:
            raise ShapeError(f"bias shape {self.b.shape} does not match weight {w.shape}")
        self.grad_w = np.zeros_like(self.w)
        self.grad_b = np.zeros_like(self.b)
        self._x: Optional[np.ndarray] = None

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"dense expects (batch, {self.in_dim}), got {x.shape}")
        z = matmul(x, self.w) + self.b
        self._x = x if mode is Mode.TRAIN else None
        return z

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError("dense backward without a matching Train-mode forward")
        x = self._x
        self._x = None
        self.grad_w += matmul(x.T, grad_out)
        self.grad_b += grad_out.sum(axis=0, keepdims=True)
        return matmul(grad_out, self.w.T)

    def parameters(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_w, self.grad_b]


class DropoutLayer(Layer):
    """Multiplicative Bernoulli masking of its input nodes.

    Train mode draws a fresh {0,1} mask per forward call, one draw per input
    node, shared across the batch rows (per-sample masks are opt-in). Eval
    mode draws nothing and rescales by (1 - p_drop); the gradient never
    flows through an Eval forward.

    ``freeze_mask`` is a probe/test hook: when set, the current mask is
    reused by subsequent Train forwards instead of being redrawn.
    """

    def __init__(self, p_drop: float, rng: Optional[RngStream] = None, per_sample: bool = False):
        if not 0.0 <= p_drop <= 1.0:
            raise DomainError(f"p_drop must be in [0, 1], got {p_drop}")
        self.p_drop = float(p_drop)
        self.rng = rng
        self.per_sample = bool(per_sample)
        self.freeze_mask = False
        self.mask: Optional[np.ndarray] = None

    def _draw_mask(self, batch: int, n: int) -> np.ndarray:
        if self.rng is None:
            raise StateError("dropout layer has no rng attached (see Network.attach_dropout_rng)")
        if self.per_sample:
            rows = [bernoulli_mask(self.rng, self.p_drop, n) for _ in range(batch)]
            return np.vstack(rows)
        return bernoulli_mask(self.rng, self.p_drop, n)

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if mode is Mode.EVAL:
            self.mask = None
            return x * (1.0 - self.p_drop)
        if not (self.freeze_mask and self.mask is not None):
            self.mask = self._draw_mask(x.shape[0], x.shape[1])
        return x * self.mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self.mask is None:
            raise StateError("dropout backward without a cached Train-mode mask")
        grad_in = grad_out * self.mask
        if not self.freeze_mask:
            self.mask = None
        return grad_in


class BatchNormLayer(Layer):
    """Per-column batch normalization with scale/shift and running statistics.

    Train mode normalizes with batch statistics (batch >= 2) and updates the
    running mean/variance with the given momentum; Eval mode uses the running
    statistics only. Backward after a Train forward is the exact analytic
    gradient of the batch transform (statistics included); backward after an
    Eval forward treats the frozen statistics as constants.
    """

    def __init__(self, dim: int, epsilon: float = 1e-5, momentum: float = 0.9):
        if not epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
        if not 0.0 <= momentum <= 1.0:
            raise DomainError(f"momentum must be in [0, 1], got {momentum}")
        self.dim = int(dim)
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self.gamma = np.ones((1, self.dim))
        self.beta = np.zeros((1, self.dim))
        self.running_mean = np.zeros((1, self.dim))
        self.running_var = np.ones((1, self.dim))
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._cache = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"batchnorm expects (batch, {self.dim}), got {x.shape}")
        if mode is Mode.TRAIN:
            if x.shape[0] < 2:
                raise DomainError("batchnorm needs batch size >= 2 in Train mode")
            mean = x.mean(axis=0, keepdims=True)
            var = x.var(axis=0, keepdims=True)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            x_hat = (x - mean) * inv_std
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
            self._cache = (Mode.TRAIN, x, x_hat, inv_std)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            x_hat = (x - self.running_mean) * inv_std
            self._cache = (Mode.EVAL, None, x_hat, inv_std)
        return self.gamma * x_hat + self.beta

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("batchnorm backward without a matching forward")
        mode, x, x_hat, inv_std = self._cache
        self._cache = None
        self.grad_gamma += (grad_out * x_hat).sum(axis=0, keepdims=True)
        self.grad_beta += grad_out.sum(axis=0, keepdims=True)
        g_hat = grad_out * self.gamma
        if mode is Mode.EVAL:
            return g_hat * inv_std
        n = x.shape[0]
        # full gradient through batch mean and variance
        return (inv_std / n) * (
            n * g_hat
            - g_hat.sum(axis=0, keepdims=True)
            - x_hat * (g_hat * x_hat).sum(axis=0, keepdims=True)
        )

    def parameters(self) -> list[np.ndarray]:
        return [self.gamma, self.beta]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_gamma, self.grad_beta]


class ActivationLayer(Layer):
    """Elementwise nonlinearity: a plain ActivationKind or a GaafSpec."""

    def __init__(self, fn: act.ActivationKind | act.GaafSpec):
        self.fn = fn
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        self._x = x if mode is Mode.TRAIN else None
        if isinstance(self.fn, act.GaafSpec):
            return act.gaaf_forward(self.fn, x)
        return act.activation_eval(self.fn, x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError("activation backward without a matching Train-mode forward")
        x = self._x
        self._x = None
        if isinstance(self.fn, act.GaafSpec):
            return act.gaaf_backward(self.fn, x, grad_out)
        return grad_out * act.activation_deriv(self.fn, x)


class Network:
    """An ordered stack of layers; backward runs exactly in reverse order.

    The empty network is the identity. Layer errors are re-raised with the
    offending layer's index attached.
    """

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, mode: Mode) -> np.ndarray:
        out, _ = self._forward(x, mode, collect_nets=False)
        return out

    def forward_collect_nets(self, x: np.ndarray, mode: Mode) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass that also returns every dense layer's output (the nets),
        in layer order; the final entry is the output logits' net."""
        return self._forward(x, mode, collect_nets=True)

    def _forward(self, x, mode, collect_nets):
        nets = []
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, mode)
            except Exception as exc:
                raise type(exc)(f"layer {i} ({type(layer).__name__}): {exc}") from exc
            if collect_nets and isinstance(layer, DenseLayer):
                nets.append(x)
        return x, nets

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for i in reversed(range(len(self.layers))):
            try:
                grad = self.layers[i].backward(grad)
            except Exception as exc:
                raise type(exc)(f"layer {i} ({type(self.layers[i]).__name__}): {exc}") from exc
        return grad

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.gradients()]

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def dense_layers(self) -> list[tuple[int, DenseLayer]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, DenseLayer)]

    def dropout_layers(self) -> list[tuple[int, DropoutLayer]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, DropoutLayer)]

    def attach_dropout_rng(self, rng: RngStream) -> None:
        """Give every dropout layer an independent child stream of `rng`."""
        for i, layer in self.dropout_layers():
            layer.rng = rng.split(f"dropout-{i}")


def build_mlp(
    layer_sizes: list[int],
    activation: act.ActivationKind | act.GaafSpec,
    rng: RngStream,
    dropout_p: float = 0.0,
    dropout_per_sample: bool = False,
    batchnorm: bool = False,
    init_scale: Optional[float] = None,
) -> Network:
    """Fully connected classifier stack.

    Each hidden step is dense -> [batchnorm] -> activation -> [dropout]; the
    final dense layer emits raw logits. Dropout masks every hidden
    activation's output (so the nets of every dense layer after the first
    carry mask-induced variance) but never the raw input. Weights are
    N(0, scale^2) with scale 1/sqrt(fan_in) unless overridden; biases start
    at zero. Initialization draws come from per-layer child streams of
    `rng`, so two architectures that share layer shapes share weights.
    """
    if len(layer_sizes) < 2:
        raise DomainError(f"need at least input and output sizes, got {layer_sizes}")
    layers: list[Layer] = []
    last = len(layer_sizes) - 2
    for i in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        scale = init_scale if init_scale is not None else 1.0 / np.sqrt(fan_in)
        w = gaussian_init(rng.split(f"init-{i}"), fan_in, fan_out, scale)
        layers.append(DenseLayer(w))
        if i == last:
            break
        if batchnorm:
            layers.append(BatchNormLayer(fan_out))
        layers.append(ActivationLayer(activation))
        if dropout_p > 0.0:
            layers.append(
                DropoutLayer(dropout_p, rng.split(f"dropout-{i}"), per_sample=dropout_per_sample)
            )
    return Network(layers)


# -- checkpoint serialization -------------------------------------------------

_CHECKPOINT_FORMAT = "gradlab-checkpoint"
_CHECKPOINT_VERSION = 1


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode(s: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def _shape_to_entry(shape: act.ShapeKind) -> dict:
    if isinstance(shape, act.GaussianBump):
        return {"kind": "gaussian_bump", "sigma": shape.sigma}
    if isinstance(shape, act.ShiftedSigmoid):
        return {"kind": "shifted_sigmoid", "center": shape.center, "temperature": shape.temperature}
    if isinstance(shape, act.Constant):
        return {"kind": "constant", "value": shape.value}
    raise FormatError(f"unknown shape kind: {shape!r}")


def _shape_from_entry(entry: dict) -> act.ShapeKind:
    kind = entry.get("kind")
    if kind == "gaussian_bump":
        return act.GaussianBump(sigma=entry["sigma"])
    if kind == "shifted_sigmoid":
        return act.ShiftedSigmoid(center=entry["center"], temperature=entry["temperature"])
    if kind == "constant":
        return act.Constant(value=entry["value"])
    raise FormatError(f"checkpoint has unknown shape kind: {kind!r}")


def _layer_to_entry(layer: Layer) -> dict:
    if isinstance(layer, DenseLayer):
        return {
            "kind": "dense",
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "w": _encode(layer.w),
            "b": _encode(layer.b),
        }
    if isinstance(layer, DropoutLayer):
        return {"kind": "dropout", "p_drop": layer.p_drop, "per_sample": layer.per_sample}
    if isinstance(layer, BatchNormLayer):
        return {
            "kind": "batchnorm",
            "dim": layer.dim,
            "epsilon": layer.epsilon,
            "momentum": layer.momentum,
            "gamma": _encode(layer.gamma),
            "beta": _encode(layer.beta),
            "running_mean": _encode(layer.running_mean),
            "running_var": _encode(layer.running_var),
        }
    if isinstance(layer, ActivationLayer):
        if isinstance(layer.fn, act.GaafSpec):
            return {
                "kind": "activation",
                "gaaf": {
                    "base": layer.fn.base.value,
                    "k": layer.fn.k,
                    "shape": _shape_to_entry(layer.fn.shape),
                },
            }
        return {"kind": "activation", "activation": layer.fn.value}
    raise FormatError(f"cannot serialize layer type {type(layer).__name__}")


def _layer_from_entry(entry: dict) -> Layer:
    kind = entry.get("kind")
    if kind == "dense":
        w = _decode(entry["w"], (entry["in_dim"], entry["out_dim"]))
        b = _decode(entry["b"], (1, entry["out_dim"]))
        return DenseLayer(w, b)
    if kind == "dropout":
        return DropoutLayer(entry["p_drop"], rng=None, per_sample=entry["per_sample"])
    if kind == "batchnorm":
        layer = BatchNormLayer(entry["dim"], epsilon=entry["epsilon"], momentum=entry["momentum"])
        layer.gamma = _decode(entry["gamma"], (1, entry["dim"]))
        layer.beta = _decode(entry["beta"], (1, entry["dim"]))
        layer.running_mean = _decode(entry["running_mean"], (1, entry["dim"]))
        layer.running_var = _decode(entry["running_var"], (1, entry["dim"]))
        layer.grad_gamma = np.zeros_like(layer.gamma)
        layer.grad_beta = np.zeros_like(layer.beta)
        return layer
    if kind == "activation":
        if "gaaf" in entry:
            g = entry["gaaf"]
            spec = act.GaafSpec(
                base=act.ActivationKind(g["base"]), k=g["k"], shape=_shape_from_entry(g["shape"])
            )
            return ActivationLayer(spec)
        return ActivationLayer(act.ActivationKind(entry["activation"]))
    raise FormatError(f"checkpoint has unknown layer kind: {kind!r}")


def save_checkpoint(net: Network, path) -> None:
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "layers": [_layer_to_entry(layer) for layer in net.layers],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path, dropout_rng: Optional[RngStream] = None) -> Network:
    """Rebuild a network from a checkpoint file.

    Dropout layers come back without a random stream; pass ``dropout_rng``
    (or call ``attach_dropout_rng`` later) before any Train-mode forward.
    Eval-mode use needs no stream.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format") != _CHECKPOINT_FORMAT:
        raise FormatError(f"not a checkpoint file (format={doc.get('format')!r})")
    if doc.get("version") != _CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {doc.get('version')!r}")
    net = Network([_layer_from_entry(e) for e in doc["layers"]])
    if dropout_rng is not None:
        net.attach_dropout_rng(dropout_rng)
    return net
