"""Declarative layer stacks for the generator and the desk-scale classifiers."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dfadkd import autodiff as ad

# (mean, variance) per batchnorm layer, keyed by layer index.
BNStats = dict


@dataclass(frozen=True)
class Layer:
    kind: str
    units: int = 0           # dense
    filters: int = 0         # conv2d
    kernel: int = 3
    stride: int = 1
    bias: bool = False
    shape: tuple = ()        # reshape target (without batch)

    def to_dict(self):
        d = {"kind": self.kind}
        for key, default in (("units", 0), ("filters", 0), ("stride", 1), ("bias", False), ("shape", ())):
            if getattr(self, key) != default:
                d[key] = list(self.shape) if key == "shape" else getattr(self, key)
        if self.kind == "conv2d":
            d["kernel"] = self.kernel
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(d["shape"])
        return cls(**d)


LAYER_KINDS = {"dense", "conv2d", "batchnorm", "relu", "tanh", "upsample2x", "reshape", "gap", "flatten"}


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        for layer in self.layers:
            if layer.kind not in LAYER_KINDS:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
        self.shapes()  # static consistency check

    def shapes(self) -> list[tuple]:
        """Output shape (without batch) of every layer; raises on inconsistency."""
        shape = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            k = layer.kind
            if k == "dense":
                if len(shape) != 1:
                    raise ad.ShapeError(f"layer {i}: dense expects flat input, got {shape}")
                shape = (layer.units,)
            elif k == "conv2d":
                if len(shape) != 3:
                    raise ad.ShapeError(f"layer {i}: conv2d expects (H, W, C) input, got {shape}")
                h, w, _ = shape
                shape = (-(-h // layer.stride), -(-w // layer.stride), layer.filters)
            elif k == "upsample2x":
                shape = (shape[0] * 2, shape[1] * 2, shape[2])
            elif k == "reshape":
                if int(np.prod(layer.shape)) != int(np.prod(shape)):
                    raise ad.ShapeError(f"layer {i}: cannot reshape {shape} to {layer.shape}")
                shape = tuple(layer.shape)
            elif k == "gap":
                shape = (shape[-1],)
            elif k == "flatten":
                shape = (int(np.prod(shape)),)
            out.append(shape)
        return out

    @property
    def output_shape(self):
        return self.shapes()[-1]

    def bn_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "batchnorm"]

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), tuple(Layer.from_dict(l) for l in d["layers"]))


@dataclass
class Params:
    """Named trainable tensors plus running batchnorm statistics per layer."""

    tensors: dict = field(default_factory=dict)
    running: BNStats = field(default_factory=dict)

    def copy(self) -> "Params":
        return copy.deepcopy(self)

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def build_generator(latent_dim: int = 512, width: int = 32, height: int = 32,
                    channels: tuple = (512, 256, 128, 64)) -> ModelSpec:
    """fc, reshape to (W/8, H/8, c0), three upsample/conv/bn/relu stages, conv-3, tanh, bn.

    With the default channels the dense layer has 8*W*H units.
    """
    if width % 8 or height % 8:
        raise ValueError(f"generator output size must be divisible by 8, got {width}x{height}")
    c0, c1, c2, c3 = channels
    layers = [Layer("dense", units=(width // 8) * (height // 8) * c0, bias=True),
              Layer("reshape", shape=(height // 8, width // 8, c0))]
    for c in (c1, c2, c3):
        layers += [Layer("upsample2x"), Layer("conv2d", filters=c), Layer("batchnorm"), Layer("relu")]
    layers += [Layer("conv2d", filters=3, bias=True), Layer("tanh"), Layer("batchnorm")]
    return ModelSpec((latent_dim,), tuple(layers))


def build_classifier(input_shape=(16, 16, 3), n_classes: int = 10, width_multiplier: int = 8,
                     depth: int = 3) -> ModelSpec:
    """conv3x3/bn/relu blocks, halving resolution and doubling width after the first block."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    h, w, _ = input_shape
    if min(h, w) < 2 ** (depth - 1):
        raise ValueError(f"input {h}x{w} is smaller than the total downsampling 2^{depth - 1}")
    layers = []
    for b in range(depth):
        layers += [Layer("conv2d", filters=width_multiplier * 2 ** b, stride=1 if b == 0 else 2),
                   Layer("batchnorm"), Layer("relu")]
    layers += [Layer("gap"), Layer("dense", units=n_classes, bias=True)]
    return ModelSpec(tuple(input_shape), tuple(layers))


def init_params(spec: ModelSpec, seed: int) -> Params:
    """He-normal weights, zero biases and beta, unit gamma, running stats (0, 1)."""
    rng = np.random.default_rng(seed)
    params = Params()
    shapes = [tuple(spec.input_shape)] + spec.shapes()
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i]
        if layer.kind == "conv2d":
            fan_in = layer.kernel * layer.kernel * in_shape[-1]
            params.tensors[f"{i}.weight"] = (rng.standard_normal(
                (layer.kernel, layer.kernel, in_shape[-1], layer.filters)) * np.sqrt(2.0 / fan_in)).astype(np.float32)
            if layer.bias:
                params.tensors[f"{i}.bias"] = np.zeros(layer.filters, np.float32)
        elif layer.kind == "dense":
            fan_in = in_shape[0]
            params.tensors[f"{i}.weight"] = (rng.standard_normal((fan_in, layer.units))
                                             * np.sqrt(2.0 / fan_in)).astype(np.float32)
            if layer.bias:
                params.tensors[f"{i}.bias"] = np.zeros(layer.units, np.float32)
        elif layer.kind == "batchnorm":
            c = in_shape[-1]
            params.tensors[f"{i}.gamma"] = np.ones(c, np.float32)
            params.tensors[f"{i}.beta"] = np.zeros(c, np.float32)
            params.running[i] = (np.zeros(c, np.float32), np.ones(c, np.float32))
    return params


def apply(spec: ModelSpec, params: Params, x: ad.Node, mode: str = "infer",
          bind: Optional[str] = None, quant=None):
    """Run ``spec`` on node ``x`` inside ``x.graph``.

    ``bind`` registers the parameters as graph params named ``bind + name``
    (so gradients are reported); otherwise they enter as constants.  ``quant``
    optionally supplies ``weight(i, node)`` and ``activation(i, node)`` hooks
    used for fake quantization.  Returns ``(output, batch_stats)`` where
    ``batch_stats`` maps each batchnorm layer to the (mean, var) nodes of its
    input.
    """
    graph = x.graph
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ad.ShapeError(f"input shape {tuple(x.shape[1:])} does not match model input {tuple(spec.input_shape)}")

    def p(name):
        value = params.tensors[name]
        return graph.param(bind + name, value) if bind is not None else graph.constant(value)

    stats = {}
    h = x
    layers = spec.layers
    for i, layer in enumerate(layers):
        k = layer.kind
        if k in ("conv2d", "dense"):
            w = p(f"{i}.weight")
            if quant is not None:
                w = quant.weight(i, w)
            b = p(f"{i}.bias") if layer.bias else None
            if k == "conv2d":
                h = ad.conv2d(h, w, layer.stride, "same")
                if b is not None:
                    h = ad.add(h, b)
            else:
                h = ad.dense(h, w, b)
            if quant is not None and not (i + 1 < len(layers) and layers[i + 1].kind == "relu"):
                h = quant.activation(i, h)
        elif k == "batchnorm":
            rm, rv = params.running[i]
            h, mu, var = ad.batchnorm(h, p(f"{i}.gamma"), p(f"{i}.beta"), rm, rv, mode)
            stats[i] = (mu, var)
        elif k == "relu":
            h = ad.relu(h)
            if quant is not None and i > 0 and layers[i - 1].kind in ("conv2d", "dense"):
                h = quant.activation(i - 1, h)
        elif k == "tanh":
            h = ad.tanh(h)
        elif k == "upsample2x":
            h = ad.upsample_nearest2x(h)
        elif k == "reshape":
            h = ad.reshape(h, (h.shape[0],) + tuple(layer.shape))
        elif k == "gap":
            h = ad.global_avg_pool(h)
        elif k == "flatten":
            h = ad.reshape(h, (h.shape[0], -1))
    return h, stats


def forward(spec: ModelSpec, params: Params, x: np.ndarray, mode: str = "infer"):
    """Gradient-free forward pass returning arrays: ``(output, batch_stats)``."""
    graph = ad.Graph(np.asarray(x).dtype if np.asarray(x).dtype == np.float64 else np.float32)
    out, stats = apply(spec, params, graph.constant(x), mode)
    return out.value, {l: (m.value, v.value) for l, (m, v) in stats.items()}


def update_running_stats(params: Params, batch_stats, momentum: float = 0.9) -> None:
    """Exponential moving average ``running = momentum * running + (1 - momentum) * batch``."""
    for l, (m, v) in batch_stats.items():
        m = m.value if isinstance(m, ad.Node) else m
        v = v.value if isinstance(v, ad.Node) else v
        rm, rv = params.running[l]
        params.running[l] = ((momentum * rm + (1 - momentum) * m).astype(rm.dtype),
                             (momentum * rv + (1 - momentum) * v).astype(rv.dtype))


def fold_batchnorm(spec: ModelSpec, params: Params, epsilon: float = ad.BN_EPSILON):
    """Fold inference-mode batchnorm into the preceding convolution.

    Returns an equivalent ``(spec, params)`` without batchnorm layers following
    convolutions; the folded convolutions carry a bias.
    """
    new_layers, new_params = [], Params()
    layers = spec.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        j = len(new_layers)
        if layer.kind == "conv2d" and i + 1 < len(layers) and layers[i + 1].kind == "batchnorm":
            rm, rv = params.running[i + 1]
            gamma = params.tensors[f"{i + 1}.gamma"].astype(np.float64)
            beta = params.tensors[f"{i + 1}.beta"].astype(np.float64)
            scale = gamma / np.sqrt(rv.astype(np.float64) + epsilon)
            w = params.tensors[f"{i}.weight"].astype(np.float64) * scale
            b = params.tensors.get(f"{i}.bias", np.zeros(layer.filters)).astype(np.float64)
            new_layers.append(Layer("conv2d", filters=layer.filters, kernel=layer.kernel,
                                    stride=layer.stride, bias=True))
            new_params.tensors[f"{j}.weight"] = w.astype(np.float32)
            new_params.tensors[f"{j}.bias"] = ((b - rm) * scale + beta).astype(np.float32)
            i += 2
            continue
        new_layers.append(layer)
        for name, value in params.tensors.items():
            li, _, suffix = name.partition(".")
            if int(li) == i:
                new_params.tensors[f"{j}.{suffix}"] = value.copy()
        if i in params.running:
            m, v = params.running[i]
            new_params.running[j] = (m.copy(), v.copy())
        i += 1
    return ModelSpec(spec.input_shape, tuple(new_layers)), new_params
