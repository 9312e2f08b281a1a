import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dfadkd import autodiff as ad
from dfadkd import quantization as qz
from dfadkd.networks import build_classifier, forward, init_params

bits_st = st.integers(2, 8)
bound = st.floats(-1e3, 1e3)


def test_qparams_hand_examples():
    q = qz.compute_qparams(-1.0, 1.0, 8)
    assert q.scale == pytest.approx(2 / 255)
    # -lo/scale = 127.5 rounds half to even
    assert q.zero_point == 128
    q = qz.compute_qparams(0.2, 1.0, 8)
    assert (q.min, q.max, q.zero_point) == (0.0, 1.0, 0)
    assert q.scale == pytest.approx(1 / 255)
    q = qz.compute_qparams(0.0, 0.0, 8)
    assert (q.scale, q.zero_point) == (1.0, 0)
    assert qz.quantize(0.0, q) == 0


@pytest.mark.parametrize("args", [(0, 1, 1), (0, 1, 9), (np.nan, 1, 8), (0, np.inf, 8), (1, 0, 8)])
def test_qparams_rejects_invalid(args):
    with pytest.raises(ValueError):
        qz.compute_qparams(*args)


@given(bound, bound, bits_st)
def test_qparams_range_contains_zero_and_zero_is_exact(a, b, bits):
    lo, hi = min(a, b), max(a, b)
    q = qz.compute_qparams(lo, hi, bits)
    assert q.min <= 0 <= q.max
    assert 0 <= q.zero_point <= q.qmax
    assert qz.quantize(0.0, q) == q.zero_point
    assert qz.dequantize(q.zero_point, q) == 0.0


@settings(max_examples=200)
@given(bound, bound, bits_st, st.integers(0, 2 ** 31))
def test_roundtrip_error_bound(a, b, bits, seed):
    lo, hi = min(a, b), max(a, b)
    q = qz.compute_qparams(lo, hi, bits)
    x = np.random.default_rng(seed).uniform(q.min, q.max, 500)
    err = np.abs(x - qz.fake_quantize(x, q))
    assert np.all(err <= q.scale / 2 * (1 + 1e-9) + 1e-12)


@given(bound, bound, bits_st)
def test_saturation(a, b, bits):
    q = qz.compute_qparams(min(a, b), max(a, b), bits)
    top, bottom = (q.qmax - q.zero_point) * q.scale, -q.zero_point * q.scale
    assert qz.quantize(top + q.scale + 1, q) == q.qmax
    assert qz.quantize(bottom - q.scale - 1, q) == 0


@given(arrays(np.float64, 50, elements=st.floats(-100, 100)), bound, bound, bits_st)
def test_quantize_monotone_and_fake_quant_idempotent(x, a, b, bits):
    q = qz.compute_qparams(min(a, b), max(a, b), bits)
    xs = np.sort(x)
    assert np.all(np.diff(qz.quantize(xs, q)) >= 0)
    once = qz.fake_quantize(x, q)
    np.testing.assert_array_equal(qz.fake_quantize(once, q), once)


@settings(max_examples=100)
@given(arrays(np.float64, 200, elements=st.floats(-10, 10)))
def test_fewer_bits_never_lower_error(x):
    lo, hi = float(x.min()), float(x.max())
    e8 = np.linalg.norm(x - qz.fake_quantize(x, qz.compute_qparams(lo, hi, 8)))
    e4 = np.linalg.norm(x - qz.fake_quantize(x, qz.compute_qparams(lo, hi, 4)))
    assert e4 >= e8 - 1e-9


def test_graph_fake_quant_matches_numpy_and_ste_mask():
    q = qz.compute_qparams(-0.5, 1.5, 4)
    x = np.linspace(-1, 2, 31)
    g = ad.Graph(np.float64)
    xn = g.param("x", x)
    out = ad.fake_quant(xn, q.scale, q.zero_point, q.bits)
    np.testing.assert_allclose(out.value, qz.fake_quantize(x, q), atol=1e-12)
    grad = g.backward(ad.sum(out))["x"]
    # clamp interval of the integer grid, which zero-point rounding may shift off [min, max]
    inside = (x >= -q.zero_point * q.scale) & (x <= (q.qmax - q.zero_point) * q.scale)
    np.testing.assert_array_equal(grad, inside.astype(float))


def test_range_overlap():
    assert qz.range_overlap((0, 2), (1, 3)) == pytest.approx(1 / 3)
    assert qz.range_overlap((0, 1), (0, 1)) == 1.0
    assert qz.range_overlap((0, 1), (2, 3)) == 0.0


def _model():
    spec = build_classifier((8, 8, 3), 4, 3, 2)
    return spec, init_params(spec, 0)


def test_calibration_single_and_two_batches():
    spec, params = _model()
    rng = np.random.default_rng(0)
    b1 = rng.standard_normal((6, 8, 8, 3)).astype(np.float32)
    b2 = rng.standard_normal((6, 8, 8, 3)).astype(np.float32) * 3
    r1 = qz.calibrate_activation_ranges(spec, params, [b1])
    r2 = qz.calibrate_activation_ranges(spec, params, [b2])
    r12 = qz.calibrate_activation_ranges(spec, params, [b1, b2])
    assert set(r1) == set(qz.quantizable_layers(spec))
    for i in r1:
        assert r12[i] == (min(r1[i][0], r2[i][0]), max(r1[i][1], r2[i][1]))
    # single batch gives that batch's exact extremes at the final dense output
    last = qz.quantizable_layers(spec)[-1]
    logits = forward(spec, params, b1)[0]
    assert r1[last] == pytest.approx((float(logits.min()), float(logits.max())))
    with pytest.raises(ValueError):
        qz.calibrate_activation_ranges(spec, params, [])


def test_quantize_model_zero_exact_on_every_layer():
    spec, params = _model()
    x = np.random.default_rng(1).standard_normal((8, 8, 8, 3)).astype(np.float32)
    fspec, fparams, qconfig = qz.quantize_model(spec, params, [x], 8, 8)
    assert set(qconfig.layers) == set(qz.quantizable_layers(fspec))
    for entry in qconfig.layers.values():
        for q in (entry.weight, entry.activation):
            assert qz.dequantize(qz.quantize(0.0, q), q) == 0.0
    # 8/8 fake quant stays close to float
    diff = qz.fake_quant_forward(fspec, fparams, qconfig, x) - forward(spec, params, x)[0]
    assert np.max(np.abs(diff)) < 0.1


def test_missing_layer_entry_is_an_error():
    spec, params = _model()
    x = np.zeros((2, 8, 8, 3), np.float32)
    fspec, fparams, qconfig = qz.quantize_model(spec, params, [x], 8, 8)
    qconfig.layers.pop(qz.quantizable_layers(fspec)[0])
    with pytest.raises(KeyError):
        qz.fake_quant_forward(fspec, fparams, qconfig, x)


def test_quantconfig_bits_validated():
    with pytest.raises(ValueError):
        qz.QuantConfig(1, 8)


def test_linear_model_matches_hand_arithmetic():
    from dfadkd.networks import Layer, ModelSpec

    spec = ModelSpec((1, 1, 2), (Layer("flatten"), Layer("dense", units=2, bias=True)))
    params = init_params(spec, 0)
    params.tensors["1.weight"][:] = [[0.5, -1.0], [0.25, 1.0]]
    params.tensors["1.bias"][:] = [0.1, -0.2]
    x = np.array([[[[1.0, 2.0]]]], np.float32)
    qconfig = qz.build_qconfig(spec, params, {1: (0.8, 1.1)}, weight_bits=2, activation_bits=8)
    # 2-bit weights over [-1, 1]: scale 2/3, zero point round(1.5) = 2, grid {-4/3, -2/3, 0, 2/3}
    wq = np.array([[2 / 3, -4 / 3], [0.0, 2 / 3]])
    pre = x.reshape(1, 2) @ wq + [0.1, -0.2]
    # activations over [0, 1.1] at 8 bits: zero point 0, negatives clamp to 0
    s = 1.1 / 255
    expected = np.clip(np.round(pre / s), 0, 255) * s
    np.testing.assert_allclose(qz.fake_quant_forward(spec, params, qconfig, x), expected, atol=1e-6)
