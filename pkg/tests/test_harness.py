import time

import numpy as np
import pytest

from dfadkd import data, harness
from dfadkd.experiments import desk_config
from dfadkd.networks import Layer, ModelSpec, build_classifier


@pytest.fixture(scope="module")
def splits():
    cfg = desk_config()
    return data.make_synthetic_dataset(0, cfg.n_classes, cfg.image_size, cfg.image_size,
                                       cfg.n_train, cfg.n_test, cfg.data_noise)


@pytest.fixture(scope="module")
def teacher(splits):
    cfg = desk_config()
    tr, te = splits
    spec = build_classifier((16, 16, 3), 10, cfg.teacher_width, cfg.depth)
    t0 = time.perf_counter()
    params, acc = harness.train_teacher(tr, spec, cfg.teacher_epochs, 0, te, cfg.teacher_batch_size,
                                        cfg.teacher_lr)
    return spec, params, acc, time.perf_counter() - t0


def test_desk_teacher_accuracy_and_time(teacher):
    _, params, acc, seconds = teacher
    assert acc >= 0.95
    assert seconds <= 180
    assert all(np.all(v > 0) for _, v in params.running.values())


def test_linear_model_trails_cnn(splits, teacher):
    tr, te = splits
    linear = ModelSpec((16, 16, 3), (Layer("flatten"), Layer("dense", units=10, bias=True)))
    _, lin_acc = harness.train_teacher(tr, linear, 8, 0, te, lr=0.01)
    assert lin_acc <= teacher[2] - 0.05


def test_evaluate_rejects_shape_mismatch(teacher):
    spec, params, _, _ = teacher
    _, te = data.make_synthetic_dataset(0, width=8, height=8, n_train=2, n_test=4)
    with pytest.raises(ValueError):
        harness.evaluate(spec, params, te)


def test_training_divergence_aborts(splits):
    tr, _ = splits
    images = tr.images[:64].copy()
    images[3, 2, 2, 0] = np.nan
    bad = data.Dataset(images, tr.labels[:64], "train", 0)
    spec = build_classifier((16, 16, 3), 10, 2, 1)
    with pytest.raises(FloatingPointError):
        harness.train_teacher(bad, spec, 1, 0)
