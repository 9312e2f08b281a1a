"""Supervised teacher training and accuracy evaluation."""
from __future__ import annotations

import logging

import numpy as np

from dfadkd import autodiff as ad
from dfadkd import losses, optim
from dfadkd.data import Dataset
from dfadkd.networks import ModelSpec, Params, apply, forward, init_params, update_running_stats

log = logging.getLogger(__name__)


def predict_logits(spec: ModelSpec, params: Params, images: np.ndarray, qconfig=None,
                   batch_size: int = 500) -> np.ndarray:
    from dfadkd import quantization

    outs = []
    for lo in range(0, len(images), batch_size):
        x = images[lo:lo + batch_size]
        if qconfig is None:
            outs.append(forward(spec, params, x, "infer")[0])
        else:
            outs.append(quantization.fake_quant_forward(spec, params, qconfig, x))
    return np.concatenate(outs)


def evaluate(spec: ModelSpec, params: Params, dataset: Dataset, qconfig=None) -> float:
    """Top-1 accuracy (fraction) in inference mode, fake-quantized when ``qconfig`` is given."""
    if tuple(dataset.images.shape[1:]) != tuple(spec.input_shape):
        raise ad.ShapeError(f"dataset images {dataset.images.shape[1:]} do not fit model input {spec.input_shape}")
    logits = predict_logits(spec, params, dataset.images, qconfig)
    return float(np.mean(logits.argmax(axis=1) == dataset.labels.argmax(axis=1)))


def train_teacher(dataset: Dataset, spec: ModelSpec, epochs: int, seed: int, test: Dataset = None,
                  batch_size: int = 64, lr: float = 0.05, momentum: float = 0.9,
                  bn_momentum: float = 0.9, on_epoch=None):
    """Cross-entropy training with Nesterov SGD and per-step cosine decay.

    Returns ``(params, accuracy)`` where accuracy is measured on ``test`` (or
    on ``dataset`` when no test split is given).  ``on_epoch(epoch, mean_loss, params)``
    is called after every epoch.
    """
    params = init_params(spec, seed)
    rng = np.random.default_rng(seed + 1)
    state = optim.nesterov(momentum)
    steps_per_epoch = -(-len(dataset) // batch_size)
    total = max(epochs * steps_per_epoch, 1)
    it = 0
    for epoch in range(epochs):
        running = 0.0
        for x, y in dataset.batches(batch_size, rng):
            g = ad.Graph()
            logits, stats = apply(spec, params, g.constant(x), "train", bind="")
            loss = losses.supervised_loss(y, logits)
            if not np.isfinite(loss.value):
                raise FloatingPointError(f"teacher training diverged at epoch {epoch}, step {it}")
            grads = g.backward(loss)
            optim.nesterov_step(state, params.tensors, grads, optim.cosine_lr(it, total, lr))
            update_running_stats(params, stats, bn_momentum)
            running += float(loss.value)
            it += 1
        log.info("teacher epoch %d loss %.4f", epoch, running / steps_per_epoch)
        if on_epoch is not None:
            on_epoch(epoch, running / steps_per_epoch, params)
    acc = evaluate(spec, params, test if test is not None else dataset)
    return params, acc
