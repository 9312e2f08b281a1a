import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dfadkd import optim


def test_cosine_endpoints():
    assert optim.cosine_lr(0, 100, 0.1) == pytest.approx(0.1)
    assert optim.cosine_lr(50, 100, 0.1) == pytest.approx(0.05)
    assert optim.cosine_lr(100, 100, 0.1) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        optim.cosine_lr(101, 100, 0.1)


@given(st.integers(1, 10_000), st.floats(1e-6, 1.0))
def test_cosine_monotone_and_bounded(total, base):
    lrs = [optim.cosine_lr(s, total, base) for s in range(0, total + 1, max(1, total // 50))]
    assert all(0 <= lr <= base * (1 + 1e-12) for lr in lrs)
    assert all(a >= b - 1e-15 for a, b in zip(lrs, lrs[1:]))


def test_adam_first_steps_match_hand_computation():
    p = {"w": np.array([1.0, -2.0])}
    state = optim.adam(beta1=0.5)
    g1, g2 = np.array([0.2, -0.4]), np.array([0.1, 0.3])
    optim.adam_step(state, p, {"w": g1}, 0.01)
    # first bias-corrected step is lr * sign(g) (up to eps)
    np.testing.assert_allclose(p["w"], [1.0 - 0.01, -2.0 + 0.01], atol=1e-7)
    optim.adam_step(state, p, {"w": g2}, 0.01)
    m = 0.5 * (0.5 * g1) + 0.5 * g2
    v = 0.999 * (0.001 * g1 ** 2) + 0.001 * g2 ** 2
    step = 0.01 * (m / (1 - 0.25)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    first = 0.01 * g1 / (np.abs(g1) + 1e-8)
    np.testing.assert_allclose(p["w"], np.array([1.0, -2.0]) - first - step, rtol=1e-12)


def test_nesterov_matches_reference_recurrence():
    p = {"w": np.array([1.0])}
    state = optim.nesterov(0.9)
    v, w = 0.0, 1.0
    for g in (0.5, -0.2, 0.3):
        optim.nesterov_step(state, p, {"w": np.array([g])}, 0.1)
        v = 0.9 * v - 0.1 * g
        w = w + 0.9 * v - 0.1 * g
    np.testing.assert_allclose(p["w"], [w])


def test_quadratic_converges():
    for state in (optim.adam(0.5), optim.nesterov(0.9)):
        p = {"w": np.array([3.0, -4.0])}
        for s in range(1000):
            optim.step(state, p, {"w": 2 * p["w"]}, optim.cosine_lr(s, 1000, 0.05))
        assert np.linalg.norm(p["w"]) < 1e-2


def test_nonfinite_gradient_names_parameter():
    with pytest.raises(FloatingPointError, match="layer.w"):
        optim.adam_step(optim.adam(), {"layer.w": np.zeros(2)}, {"layer.w": np.array([math.nan, 0.0])}, 0.1)
    with pytest.raises(ValueError, match="shape"):
        optim.nesterov_step(optim.nesterov(), {"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)
