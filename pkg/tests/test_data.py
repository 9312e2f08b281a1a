import numpy as np
import pytest

from dfadkd import data, harness
from dfadkd.imaging import make_grid, read_ppm, to_uint8, write_ppm
from dfadkd.networks import build_classifier, init_params


def test_deterministic_and_balanced():
    a, at = data.make_synthetic_dataset(3, n_train=203, n_test=57)
    b, bt = data.make_synthetic_dataset(3, n_train=203, n_test=57)
    assert a.images.tobytes() == b.images.tobytes() and at.labels.tobytes() == bt.labels.tobytes()
    for ds in (a, at):
        counts = ds.labels.sum(axis=0)
        assert counts.max() - counts.min() <= 1
        assert ds.images.min() >= -1 and ds.images.max() <= 1
    assert (a.split, at.split) == ("train", "test")


def test_rejects_single_class():
    with pytest.raises(ValueError):
        data.make_synthetic_dataset(0, n_classes=1)


def test_split_files(tmp_path):
    tr, te = data.make_synthetic_dataset(0, n_train=20, n_test=10)
    data.save_splits(tmp_path, tr, te)
    back = data.load_split(tmp_path, "test")
    assert back.split == "test" and back.images.tobytes() == te.images.tobytes()
    (tmp_path / "train.npz").unlink()
    with pytest.raises(FileNotFoundError):
        data.load_split(tmp_path, "train")


def test_untrained_model_near_chance():
    _, te = data.make_synthetic_dataset(0, n_train=10, n_test=1000)
    spec = build_classifier((16, 16, 3), 10, 16, 3)
    params, acc = harness.train_teacher(te, spec, 0, seed=0)
    assert abs(acc - 0.1) <= 0.05


def test_constant_predictor_scores_one_over_k():
    _, te = data.make_synthetic_dataset(0, n_train=10, n_test=100)
    spec = build_classifier((16, 16, 3), 10, 2, 1)
    params = init_params(spec, 0)
    params.tensors["4.weight"][:] = 0
    params.tensors["4.bias"][:] = np.arange(10)[::-1]
    assert harness.evaluate(spec, params, te) == pytest.approx(0.1)
    assert harness.evaluate(spec, params, te) == harness.evaluate(spec, params, te)


def test_ppm_roundtrip(tmp_path):
    imgs = np.random.default_rng(0).uniform(-1.2, 1.2, (5, 4, 4, 3))
    grid = make_grid(imgs, 3)
    write_ppm(tmp_path / "g.ppm", grid)
    np.testing.assert_array_equal(read_ppm(tmp_path / "g.ppm"), grid)
    assert grid.shape == (2 * 5 + 1, 3 * 5 + 1, 3)
    np.testing.assert_array_equal(to_uint8(np.array([-1.0, 0.0, 1.0, 2.0])), [0, 128, 255, 255])
