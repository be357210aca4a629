import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from robustprune.numerics import (
    as_tensor, clamp, elementwise, flat_index, frobenius_norm_sq, make_rng, sign, unflat_index,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_elementwise_examples():
    np.testing.assert_array_equal(elementwise("add", [1, 2], [3, 4]), [4, 6])
    x = np.array([0.3, -2.0, 5.5])
    np.testing.assert_array_equal(elementwise("sub", x, x), np.zeros(3))
    np.testing.assert_array_equal(elementwise("mul", [2, 3], [0, 5]), [0, 15])


def test_elementwise_rejects_bad_input():
    with pytest.raises(ValueError):
        elementwise("add", np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        elementwise("div", np.zeros(2), np.zeros(2))


def test_frobenius_norm_sq():
    assert frobenius_norm_sq([3, 4]) == 25
    assert frobenius_norm_sq(np.zeros((2, 3))) == 0
    assert frobenius_norm_sq([1, 1, 1, 1]) == 4


def test_sign():
    np.testing.assert_array_equal(sign([-0.3, 0.0, 7]), [-1, 0, 1])
    np.testing.assert_array_equal(sign(np.zeros(4)), np.zeros(4))


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_sign_idempotent(x):
    np.testing.assert_array_equal(sign(sign(x)), sign(x))


def test_clamp():
    np.testing.assert_array_equal(clamp([-1, 0.5, 2], 0, 1), [0, 0.5, 1])
    with pytest.raises(ValueError):
        clamp([0.0], 1, 0)


@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_clamp_properties(x):
    np.testing.assert_array_equal(clamp(x, -1e7, 1e7), x)
    once = clamp(x, 0, 1)
    np.testing.assert_array_equal(clamp(once, 0, 1), once)
    assert np.all((once >= 0) & (once <= 1))


def test_as_tensor_shape_checks():
    t = as_tensor(range(6), (2, 3))
    assert t.dtype == np.float64 and t.shape == (2, 3)
    with pytest.raises(ValueError):
        as_tensor(range(5), (2, 3))
    with pytest.raises(ValueError):
        as_tensor([], (0,))


@pytest.mark.parametrize("shape", [(5,), (3, 4), (2, 3, 4), (5, 5, 5, 5), (1, 4, 1, 2)])
def test_row_major_round_trip(shape):
    ref = np.arange(int(np.prod(shape))).reshape(shape)
    for coord in itertools.product(*map(range, shape)):
        i = flat_index(shape, coord)
        assert i == ref[coord]
        assert unflat_index(shape, i) == coord


def test_rng_determinism_and_substreams():
    a = make_rng(7, "init").standard_normal(100)
    b = make_rng(7, "init").standard_normal(100)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, make_rng(7, "shuffle").standard_normal(100))
    assert not np.array_equal(a, make_rng(8, "init").standard_normal(100))
    assert not np.array_equal(make_rng(7, "pgd", 0).random(5), make_rng(7, "pgd", 1).random(5))
