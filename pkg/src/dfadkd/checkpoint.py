"""Binary checkpoint format.

Layout::

    8 bytes   magic b"DFADKD01"
    4 bytes   header length, little-endian unsigned
    n bytes   UTF-8 JSON header
    ...       raw little-endian tensor payloads, in header order

The header lists every tensor (name, shape, dtype) plus the model spec,
batchnorm running-stat layer ids and quantization parameters.
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from dfadkd.networks import ModelSpec, Params
from dfadkd.quantization import LayerQuant, QuantConfig, QuantParams, compute_qparams, dequantize, quantize

MAGIC = b"DFADKD01"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "uint8": "u1", "int32": "<i4"}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class PayloadMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    spec: Optional[ModelSpec] = None
    bn: Optional[dict] = None          # layer -> (mean, var)
    qconfig: Optional[QuantConfig] = None
    meta: dict = field(default_factory=dict)


def _qconfig_to_dict(q: QuantConfig):
    return {"weight_bits": q.weight_bits, "activation_bits": q.activation_bits, "mode": q.mode,
            "layers": {str(i): {"weight": e.weight.to_dict() if e.weight else None,
                                "activation": e.activation.to_dict() if e.activation else None}
                       for i, e in q.layers.items()}}


def _qconfig_from_dict(d):
    q = QuantConfig(d["weight_bits"], d["activation_bits"], mode=d["mode"], fixed_weights=True)
    for i, e in d["layers"].items():
        q.layers[int(i)] = LayerQuant(QuantParams.from_dict(e["weight"]) if e["weight"] else None,
                                      QuantParams.from_dict(e["activation"]) if e["activation"] else None)
    return q


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries, payloads = [], []

    def put(name, array):
        array = np.asarray(array)
        dtype = str(array.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for tensor {name!r}")
        entries.append({"name": name, "shape": list(array.shape), "dtype": dtype})
        payloads.append(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())

    for name in sorted(ckpt.tensors):
        put(name, ckpt.tensors[name])
    bn_layers = []
    if ckpt.bn:
        for l in sorted(ckpt.bn):
            mean, var = ckpt.bn[l]
            put(f"bn/{l}/mean", mean)
            put(f"bn/{l}/var", var)
            bn_layers.append(int(l))
    header = {"format_version": FORMAT_VERSION,
              "spec": ckpt.spec.to_dict() if ckpt.spec is not None else None,
              "tensors": entries,
              "bn_layers": bn_layers if ckpt.bn is not None else None,
              "qconfig": _qconfig_to_dict(ckpt.qconfig) if ckpt.qconfig is not None else None,
              "meta": ckpt.meta}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for p in payloads:
            f.write(p)


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a checkpoint file")
    if len(blob) < len(MAGIC) + 4:
        raise TruncatedCheckpointError(f"{path}: truncated before header length")
    (n,) = struct.unpack("<I", blob[8:12])
    if 12 + n > len(blob):
        raise TruncatedCheckpointError(f"{path}: header length {n} exceeds file size {len(blob)}")
    try:
        header = json.loads(blob[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedCheckpointError(f"{path}: header length {n} does not delimit a valid header") from exc
    offset = 12 + n
    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset + size > len(blob):
            raise TruncatedCheckpointError(f"{path}: payload for {entry['name']!r} is truncated")
        arr = np.frombuffer(blob, dtype=dt, count=size // dt.itemsize, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.astype(entry["dtype"])
        offset += size
    if offset != len(blob):
        raise PayloadMismatchError(f"{path}: {len(blob) - offset} trailing bytes after the listed tensors")
    bn = None
    if header.get("bn_layers") is not None:
        bn = {l: (tensors.pop(f"bn/{l}/mean"), tensors.pop(f"bn/{l}/var")) for l in header["bn_layers"]}
    return Checkpoint(tensors=tensors,
                      spec=ModelSpec.from_dict(header["spec"]) if header.get("spec") else None,
                      bn=bn,
                      qconfig=_qconfig_from_dict(header["qconfig"]) if header.get("qconfig") else None,
                      meta=header.get("meta", {}))


def model_to_checkpoint(model, meta=None) -> Checkpoint:
    """Float models store their tensors; quantized models store integer weight codes."""
    tensors = dict(model.params.tensors)
    qconfig = model.qconfig
    if qconfig is not None:
        qconfig = copy.deepcopy(qconfig)
        for i, entry in qconfig.layers.items():
            name = f"{i}.weight"
            if not qconfig.fixed_weights:
                w = tensors[name]
                entry.weight = compute_qparams(float(w.min()), float(w.max()), qconfig.weight_bits)
            if entry.weight is None:
                raise CheckpointError(f"layer {i} has no weight quantization parameters")
            tensors[name] = quantize(tensors[name], entry.weight).astype(np.uint8)
    return Checkpoint(tensors=tensors, spec=model.spec, bn=dict(model.params.running),
                      qconfig=qconfig, meta=dict(meta or {}))


def checkpoint_to_model(ckpt: Checkpoint):
    from dfadkd.train import Model

    if ckpt.spec is None:
        raise CheckpointError("checkpoint carries no model spec")
    tensors = {k: np.array(v) for k, v in ckpt.tensors.items()}
    if ckpt.qconfig is not None:
        for i, entry in ckpt.qconfig.layers.items():
            tensors[f"{i}.weight"] = dequantize(tensors[f"{i}.weight"], entry.weight).astype(np.float32)
    running = {l: (np.array(m), np.array(v)) for l, (m, v) in (ckpt.bn or {}).items()}
    return Model(ckpt.spec, Params(tensors, running), ckpt.qconfig)


def save_model(path, model, meta=None):
    save_checkpoint(path, model_to_checkpoint(model, meta))


def load_model(path):
    return checkpoint_to_model(load_checkpoint(path))
