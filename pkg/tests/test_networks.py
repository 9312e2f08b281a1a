import numpy as np
import pytest

from dfadkd import autodiff as ad
from dfadkd.networks import (ModelSpec, apply, build_classifier, build_generator, fold_batchnorm, forward,
                             init_params, update_running_stats)


def test_generator_layout_and_output_range():
    spec = build_generator(latent_dim=16, width=16, height=16, channels=(32, 16, 8, 4))
    kinds = [l.kind for l in spec.layers]
    assert kinds == ["dense", "reshape"] + ["upsample2x", "conv2d", "batchnorm", "relu"] * 3 \
        + ["conv2d", "tanh", "batchnorm"]
    assert spec.layers[0].units == 2 * 2 * 32
    assert spec.output_shape == (16, 16, 3)
    params = init_params(spec, 0)
    out, stats = forward(spec, params, np.random.default_rng(0).standard_normal((8, 16)), "train")
    assert out.shape == (8, 16, 16, 3)
    assert set(stats) == set(spec.bn_layers())
    # final batchnorm in train mode standardizes each channel
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-4)


def test_default_generator_dense_units():
    spec = build_generator()
    assert spec.layers[0].units == 8 * 32 * 32
    assert spec.output_shape == (32, 32, 3)


@pytest.mark.parametrize("size", [(12, 16), (16, 20)])
def test_generator_rejects_sizes_not_divisible_by_8(size):
    with pytest.raises(ValueError):
        build_generator(16, *size)


def test_classifier_shapes():
    spec = build_classifier((16, 16, 3), 10, 4, 3)
    assert spec.output_shape == (10,)
    convs = [l for l in spec.layers if l.kind == "conv2d"]
    assert [c.filters for c in convs] == [4, 8, 16]
    assert [c.stride for c in convs] == [1, 2, 2]
    with pytest.raises(ValueError):
        build_classifier((2, 2, 3), 10, 4, 3)


def test_spec_roundtrips_through_dict():
    spec = build_generator(8, 8, 8, (4, 4, 4, 4))
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_apply_rejects_wrong_input_shape():
    spec = build_classifier((8, 8, 3), 3, 2, 2)
    g = ad.Graph()
    with pytest.raises(ad.ShapeError, match="8, 8, 3"):
        apply(spec, init_params(spec, 0), g.constant(np.zeros((1, 8, 8, 1))))


def test_running_stats_update_is_ema():
    spec = build_classifier((8, 8, 3), 3, 2, 1)
    params = init_params(spec, 0)
    l = spec.bn_layers()[0]
    batch = {l: (np.full(2, 3.0), np.full(2, 5.0))}
    update_running_stats(params, batch, 0.9)
    np.testing.assert_allclose(params.running[l][0], 0.3, rtol=1e-6)
    np.testing.assert_allclose(params.running[l][1], 0.9 + 0.5, rtol=1e-6)


def test_train_mode_does_not_mutate_running_stats():
    spec = build_classifier((8, 8, 3), 3, 2, 2)
    params = init_params(spec, 0)
    before = {k: (m.copy(), v.copy()) for k, (m, v) in params.running.items()}
    forward(spec, params, np.ones((4, 8, 8, 3), np.float32), "train")
    for k, (m, v) in params.running.items():
        np.testing.assert_array_equal(m, before[k][0])
        np.testing.assert_array_equal(v, before[k][1])


def test_fold_batchnorm_preserves_inference_output():
    rng = np.random.default_rng(3)
    spec = build_classifier((8, 8, 3), 4, 3, 2)
    params = init_params(spec, 1)
    for l in spec.bn_layers():
        c = params.running[l][0].shape[0]
        params.running[l] = (rng.standard_normal(c).astype(np.float32),
                             rng.uniform(0.5, 2, c).astype(np.float32))
        params.tensors[f"{l}.gamma"] = rng.uniform(0.5, 1.5, c).astype(np.float32)
        params.tensors[f"{l}.beta"] = rng.standard_normal(c).astype(np.float32)
    fspec, fparams = fold_batchnorm(spec, params)
    assert not fspec.bn_layers()
    x = rng.standard_normal((5, 8, 8, 3))
    np.testing.assert_allclose(forward(fspec, fparams, x)[0], forward(spec, params, x)[0], rtol=1e-5, atol=1e-5)


def test_param_names_are_deterministic():
    spec = build_classifier((8, 8, 3), 3, 2, 2)
    a, b = init_params(spec, 5), init_params(spec, 5)
    assert sorted(a.tensors) == sorted(b.tensors)
    for k in a.tensors:
        np.testing.assert_array_equal(a.tensors[k], b.tensors[k])
