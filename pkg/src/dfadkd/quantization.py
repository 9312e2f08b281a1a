"""Per-layer asymmetric affine fake quantization, range calibration, DF-Q and DF-QAT-KD.

Quantization is simulated in floating point: ``dequantize(quantize(x))`` with a
straight-through gradient.  Weight ranges come from the weights themselves;
activation ranges are collected from representative batches, which in the
data-free pipelines are generator samples.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from dfadkd import autodiff as ad
from dfadkd.networks import ModelSpec, Params, apply, fold_batchnorm

MIN_BITS, MAX_BITS = 2, 8


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    bits: int
    min: float
    max: float

    @property
    def qmax(self) -> int:
        return 2 ** self.bits - 1

    def to_dict(self):
        return {"scale": self.scale, "zero_point": self.zero_point, "bits": self.bits,
                "min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), int(d["zero_point"]), int(d["bits"]), float(d["min"]), float(d["max"]))


def compute_qparams(lo: float, hi: float, bits: int) -> QuantParams:
    """Affine parameters for ``[lo, hi]`` widened to contain zero.

    ``scale = (hi - lo) / (2^bits - 1)`` and ``zero_point = round(-lo / scale)``
    (half to even), so real 0 maps to an integer code exactly.
    """
    if not (isinstance(bits, (int, np.integer)) and MIN_BITS <= bits <= MAX_BITS):
        raise ValueError(f"bits must be an integer in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"range bounds must be finite, got [{lo}, {hi}]")
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    qmax = 2 ** int(bits) - 1
    scale = (hi - lo) / qmax
    if scale == 0.0:  # empty or subnormal range
        return QuantParams(1.0, 0, int(bits), lo, hi)
    zero_point = int(np.clip(np.rint(-lo / scale), 0, qmax))
    return QuantParams(scale, zero_point, int(bits), lo, hi)


def quantize(x, q: QuantParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):  # huge ratios saturate in the clamp
        return np.clip(np.rint(x / q.scale) + q.zero_point, 0, q.qmax).astype(np.int32)


def dequantize(qx, q: QuantParams) -> np.ndarray:
    return (np.asarray(qx, dtype=np.float64) - q.zero_point) * q.scale


def fake_quantize(x, q: QuantParams) -> np.ndarray:
    return dequantize(quantize(x, q), q)


def range_overlap(a, b) -> float:
    """Length of the intersection of two intervals over the length of their union."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    union = max(a[1], b[1]) - min(a[0], b[0])
    if union <= 0:
        return 1.0
    return max(inter, 0.0) / union


@dataclass
class LayerQuant:
    weight: Optional[QuantParams] = None
    activation: Optional[QuantParams] = None


@dataclass
class QuantConfig:
    weight_bits: int
    activation_bits: int
    layers: dict = field(default_factory=dict)  # layer index -> LayerQuant
    mode: str = "DF-Q"
    # use the stored weight parameters instead of re-deriving them from the weights
    fixed_weights: bool = False

    def __post_init__(self):
        for b in (self.weight_bits, self.activation_bits):
            if not MIN_BITS <= b <= MAX_BITS:
                raise ValueError(f"bit widths must be in [{MIN_BITS}, {MAX_BITS}], got {b}")


def quantizable_layers(spec: ModelSpec) -> list:
    return [i for i, layer in enumerate(spec.layers) if layer.kind in ("conv2d", "dense")]


class _FakeQuantHooks:
    def __init__(self, qconfig: QuantConfig):
        self.qconfig = qconfig

    def _entry(self, i):
        try:
            return self.qconfig.layers[i]
        except KeyError:
            raise KeyError(f"no quantization entry for layer {i}; calibrate first") from None

    def weight(self, i, node):
        entry = self._entry(i)
        if not self.qconfig.fixed_weights or entry.weight is None:
            w = node.value
            entry.weight = compute_qparams(float(w.min()), float(w.max()), self.qconfig.weight_bits)
        q = entry.weight
        return ad.fake_quant(node, q.scale, q.zero_point, q.bits)

    def activation(self, i, node):
        q = self._entry(i).activation
        if q is None:
            raise KeyError(f"no activation range for layer {i}; calibrate first")
        return ad.fake_quant(node, q.scale, q.zero_point, q.bits)


class _RangeRecorder:
    def __init__(self):
        self.ranges = {}

    def weight(self, i, node):
        return node

    def activation(self, i, node):
        lo, hi = float(node.value.min()), float(node.value.max())
        if i in self.ranges:
            a, b = self.ranges[i]
            lo, hi = min(a, lo), max(b, hi)
        self.ranges[i] = (lo, hi)
        return node


def fake_quant_apply(spec: ModelSpec, params: Params, qconfig: QuantConfig, x: ad.Node,
                     bind: Optional[str] = None):
    """Graph-level fake-quantized forward pass (straight-through gradients)."""
    return apply(spec, params, x, "infer", bind, quant=_FakeQuantHooks(qconfig))


def fake_quant_forward(spec: ModelSpec, params: Params, qconfig: QuantConfig, x) -> np.ndarray:
    """Logits with every weight and layer activation passed through quantize/dequantize."""
    x = np.asarray(x)
    graph = ad.Graph(np.float64 if x.dtype == np.float64 else np.float32)
    return fake_quant_apply(spec, params, qconfig, graph.constant(x))[0].value


def calibrate_activation_ranges(spec: ModelSpec, params: Params, batches) -> dict:
    """Running (min, max) of every quantizable layer's output over ``batches`` (infer mode)."""
    recorder = _RangeRecorder()
    count = 0
    for x in batches:
        graph = ad.Graph()
        apply(spec, params, graph.constant(x), "infer", quant=recorder)
        count += 1
    if count == 0:
        raise ValueError("calibration needs at least one batch")
    return recorder.ranges


def weight_ranges(spec: ModelSpec, params: Params) -> dict:
    return {i: (float(params.tensors[f"{i}.weight"].min()), float(params.tensors[f"{i}.weight"].max()))
            for i in quantizable_layers(spec)}


def build_qconfig(spec: ModelSpec, params: Params, act_ranges: dict, weight_bits: int,
                  activation_bits: int, mode: str = "DF-Q") -> QuantConfig:
    qconfig = QuantConfig(weight_bits, activation_bits, mode=mode)
    w_ranges = weight_ranges(spec, params)
    for i in quantizable_layers(spec):
        if i not in act_ranges:
            raise KeyError(f"missing activation range for layer {i}")
        qconfig.layers[i] = LayerQuant(compute_qparams(*w_ranges[i], weight_bits),
                                       compute_qparams(*act_ranges[i], activation_bits))
    return qconfig


def recalibrate(spec: ModelSpec, params: Params, qconfig: QuantConfig, batches) -> QuantConfig:
    """Refresh activation ranges in place (from the float model) and return ``qconfig``."""
    ranges = calibrate_activation_ranges(spec, params, batches)
    for i, entry in qconfig.layers.items():
        entry.activation = compute_qparams(*ranges[i], qconfig.activation_bits)
    return qconfig


def quantize_model(spec: ModelSpec, params: Params, calibration_batches, weight_bits: int,
                   activation_bits: int, mode: str = "DF-Q"):
    """Fold batchnorm, then derive weight and activation quantization parameters.

    Returns ``(folded_spec, folded_params, qconfig)``.  The source of the
    calibration batches (real data or generator samples) is the only
    difference between the data-dependent and data-free pipelines.
    """
    fspec, fparams = fold_batchnorm(spec, params)
    ranges = calibrate_activation_ranges(fspec, fparams, calibration_batches)
    return fspec, fparams, build_qconfig(fspec, fparams, ranges, weight_bits, activation_bits, mode)


def generator_batches(generators, n_batches: int, batch_size: int, seed: int):
    """``n_batches`` synthetic batches drawn round-robin from ``generators``."""
    from dfadkd.train import sample_images

    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_batches):
        gen = generators[k % len(generators)]
        z = rng.standard_normal((batch_size, gen.spec.input_shape[0])).astype(np.float32)
        out.append(sample_images(gen, z))
    return out


def df_quantize(teacher, generator, weight_bits: int, activation_bits: int, n_batches: int = 8,
                batch_size: int = 128, seed: int = 0, eval_data=None):
    """Data-free post-training quantization of ``teacher``.

    Returns ``(quantized Model, accuracy or None)``.
    """
    from dfadkd.harness import evaluate
    from dfadkd.train import Model

    generators = generator if isinstance(generator, (list, tuple)) else [generator]
    batches = generator_batches(generators, n_batches, batch_size, seed)
    fspec, fparams, qconfig = quantize_model(teacher.spec, teacher.params, batches, weight_bits,
                                             activation_bits, "DF-Q")
    model = Model(fspec, fparams, qconfig)
    acc = evaluate(fspec, fparams, eval_data, qconfig) if eval_data is not None else None
    return model, acc


def df_qat_kd(teacher, generators, config, weight_bits: int, activation_bits: int, eval_data=None,
              n_calib_batches: int = 8):
    """Quantization-aware adversarial KD with a fake-quantized copy of the teacher as student.

    Activation ranges are re-collected from the current generators at the
    start of every epoch.  Returns ``(student Model, RunMetrics)``.
    """
    from dfadkd.train import Model, run_adversarial_kd

    if config.n_students != 1 or config.n_generators != len(generators):
        config = replace(config, n_students=1, n_generators=len(generators))
    batches = generator_batches(generators, n_calib_batches, config.batch_size, config.seed)
    fspec, fparams, qconfig = quantize_model(teacher.spec, teacher.params, batches, weight_bits,
                                             activation_bits, "DF-QAT-KD")
    student = Model(fspec, copy.deepcopy(fparams), qconfig)

    def hook(epoch, students, gens, sources):
        if epoch == 0:
            return
        calib = generator_batches(gens, n_calib_batches, config.batch_size, config.seed + 1000 + epoch)
        for s in students:
            recalibrate(s.spec, s.params, s.qconfig, calib)

    students, _, metrics = run_adversarial_kd(teacher, [student], list(generators), config, eval_data, hook)
    return students[0], metrics
