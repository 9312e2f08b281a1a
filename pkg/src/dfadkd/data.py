"""Procedural desk-scale image classification data.

Each class is a family of oriented sinusoidal gratings with a class-specific
(orientation, frequency, colour) signature.  Phase is uniformly random, so the
class-conditional pixel means are zero and a linear model on raw pixels is
close to chance, while a small CNN with rectification and pooling separates the
classes easily.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    images: np.ndarray   # N x H x W x 3, values in [-1, 1]
    labels: np.ndarray   # N x K one-hot
    split: str
    seed: int

    def __len__(self):
        return len(self.images)

    @property
    def n_classes(self):
        return self.labels.shape[1]

    def batches(self, batch_size: int, rng=None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for lo in range(0, len(self), batch_size):
            idx = order[lo:lo + batch_size]
            yield self.images[idx], self.labels[idx]

    def save(self, path):
        np.savez(path, images=self.images, labels=self.labels, split=self.split, seed=self.seed)

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            return cls(f["images"], f["labels"], str(f["split"]), int(f["seed"]))


def class_signatures(n_classes: int, seed: int = 1234):
    """Orientation (radians), spatial frequency (cycles/pixel) and RGB weights per class."""
    rng = np.random.default_rng(seed)
    n_orient = (n_classes + 1) // 2
    orient = np.array([np.pi * (k % n_orient) / n_orient for k in range(n_classes)])
    freq = np.array([0.14 if k < n_orient else 0.22 for k in range(n_classes)])
    colors = rng.uniform(0.5, 1.0, size=(n_classes, 3))
    colors /= np.linalg.norm(colors, axis=1, keepdims=True)
    return orient, freq, colors


def _render(labels, size, rng, signatures, noise):
    orient, freq, colors = signatures
    n = len(labels)
    h, w = size
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    theta = orient[labels] + rng.normal(0, 0.2, n)
    f = freq[labels] * rng.uniform(0.85, 1.15, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    amp = rng.uniform(0.6, 1.0, n)
    proj = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    wave = amp[:, None, None] * np.cos(2 * np.pi * f[:, None, None] * proj + phase[:, None, None])
    img = wave[..., None] * colors[labels][:, None, None, :] * np.sqrt(3)
    img += rng.normal(0, noise, img.shape)
    return np.clip(img, -1, 1).astype(np.float32)


def make_synthetic_dataset(seed: int, n_classes: int = 10, width: int = 16, height: int = 16,
                           n_train: int = 5000, n_test: int = 1000, noise: float = 0.5):
    """Return ``(train, test)``; classes are balanced to within one sample."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    signatures = class_signatures(n_classes)
    rng = np.random.default_rng(seed)
    out = []
    for split, n in (("train", n_train), ("test", n_test)):
        labels = rng.permutation(np.arange(n) % n_classes)
        images = _render(labels, (height, width), rng, signatures, noise)
        out.append(Dataset(images, np.eye(n_classes, dtype=np.float32)[labels], split, seed))
    return out[0], out[1]


def save_splits(directory, train: Dataset, test: Dataset):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train.save(directory / "train.npz")
    test.save(directory / "test.npz")


def load_split(directory, split: str) -> Dataset:
    path = Path(directory) / f"{split}.npz"
    if not path.exists():
        raise FileNotFoundError(f"dataset split not found: {path}")
    return Dataset.load(path)
