import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustprune.nn import build_network
from robustprune.numerics import make_rng
from robustprune.optim import (
    INIT_METHODS, Optimizer, OptimizerConfig, Schedule, fans, init_params, init_weight, lr_at,
)


def test_fans():
    assert fans((16, 8, 5, 5)) == (200, 400)
    assert fans((10, 64)) == (64, 10)


@pytest.mark.parametrize("method,expected_std", [
    ("uniform", 0.1 / math.sqrt(3)),
    ("normal", 0.01),
    ("xavier_uniform", math.sqrt(2 / (200 + 1600))),
    ("xavier_normal", math.sqrt(2 / (200 + 1600))),
    ("kaiming_uniform", math.sqrt(2 / 200)),
    ("kaiming_normal", math.sqrt(2 / 200)),
])
def test_init_scale(method, expected_std):
    w = init_weight((64, 8, 5, 5), method, make_rng(0, "init"))
    assert w.std() == pytest.approx(expected_std, rel=0.05)
    assert abs(w.mean()) < 0.1 * expected_std + 1e-3


def test_uniform_bounds():
    w = init_weight((100, 100), "uniform", make_rng(1, "init"), uniform_range=0.1)
    assert w.min() >= -0.1 and w.max() <= 0.1
    bound = math.sqrt(6 / 100)
    w = init_weight((100, 100), "kaiming_uniform", make_rng(1, "init"))
    assert w.max() <= bound and w.max() > 0.95 * bound


@pytest.mark.parametrize("shape", [(6, 1, 5, 5), (10, 64), (64, 10), (8, 8)])
def test_orthogonal(shape):
    w = init_weight(shape, "orthogonal", make_rng(2, "init")).reshape(shape[0], -1)
    if w.shape[0] <= w.shape[1]:
        np.testing.assert_allclose(w @ w.T, np.eye(w.shape[0]), atol=1e-12)
    else:
        np.testing.assert_allclose(w.T @ w, np.eye(w.shape[1]), atol=1e-12)


@pytest.mark.parametrize("method", INIT_METHODS)
def test_init_params_deterministic(method):
    spec = build_network("cifar_vgg", 1)
    a = init_params(spec, method, make_rng(3, "init"))
    b = init_params(spec, method, make_rng(3, "init"))
    for n in a.params:
        assert a.params[n].tobytes() == b.params[n].tobytes()
    assert np.all(a.params["bn1.gamma"] == 1) and np.all(a.params["bn1.running_var"] == 1)
    assert np.all(a.params["bn1.beta"] == 0) and np.all(a.params["bn1.running_mean"] == 0)


def test_init_rejects_unknown():
    with pytest.raises(ValueError):
        init_params(build_network("mnist_lenet", 1), "lecun")


def test_schedules():
    s = Schedule("step_decay", 1e-4, milestones=(80, 150), factor=0.1)
    assert lr_at(s, 0) == 1e-4 and lr_at(s, 79) == 1e-4
    assert lr_at(s, 80) == pytest.approx(1e-5) and lr_at(s, 150) == pytest.approx(1e-6)
    c = Schedule("cosine", 0.1, t_max=10)
    assert lr_at(c, 0) == 0.1 and lr_at(c, 10) == pytest.approx(0.0) and lr_at(c, 5) == pytest.approx(0.05)
    assert lr_at(c, 20) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        Schedule("constant", 0.0)
    with pytest.raises(ValueError):
        lr_at(s, -1)


def test_named_optimizers():
    assert OptimizerConfig.named("adam", 1e-3).kind == "adam"
    assert OptimizerConfig.named("cosanneal", 0.1, 7).schedule == Schedule("cosine", 0.1, t_max=7)
    with pytest.raises(ValueError):
        OptimizerConfig.named("rmsprop", 0.1)


def test_sgd_closed_form():
    opt = Optimizer(OptimizerConfig("sgd", Schedule("constant", 0.1), momentum=0.0))
    p = {"w": np.array([1.0, -2.0])}
    opt.step(p, {"w": np.array([0.5, 0.5])})
    np.testing.assert_allclose(p["w"], [0.95, -2.05])
    mom = Optimizer(OptimizerConfig("sgd", Schedule("constant", 0.1), momentum=0.9))
    p = {"w": np.zeros(1)}
    mom.step(p, {"w": np.ones(1)})
    mom.step(p, {"w": np.ones(1)})
    np.testing.assert_allclose(p["w"], [-0.1 - 0.19])


def test_adam_first_step_is_lr_times_sign():
    opt = Optimizer(OptimizerConfig("adam", Schedule("constant", 1e-3)))
    p = {"w": np.array([0.0, 0.0, 0.0])}
    opt.step(p, {"w": np.array([3.0, -0.2, 0.0])})
    np.testing.assert_allclose(p["w"], [-1e-3, 1e-3, 0.0], atol=1e-9)


def test_adam_minimises_quadratic():
    opt = Optimizer(OptimizerConfig("adam", Schedule("constant", 0.05)))
    p = {"w": np.array([3.0, -4.0])}
    for _ in range(2000):
        opt.step(p, {"w": 2 * p["w"]})
    assert np.all(np.abs(p["w"]) < 1e-2)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["adam", "sgd"]), st.integers(0, 2**31 - 1))
def test_mask_keeps_zeros_exact(kind, seed):
    rng = make_rng(seed, "mask")
    w = rng.standard_normal((5, 4))
    mask = (rng.random((5, 4)) < 0.5).astype(float)
    p = {"w": np.where(mask != 0, w, 0.0)}
    frozen = p["w"][mask == 0].tobytes()
    opt = Optimizer(OptimizerConfig(kind, Schedule("constant", 0.1)))
    opt.mask = {"w": mask}
    for _ in range(5):
        opt.step(p, {"w": rng.standard_normal((5, 4))})
    assert p["w"][mask == 0].tobytes() == frozen


def test_shape_mismatch():
    opt = Optimizer(OptimizerConfig())
    with pytest.raises(ValueError):
        opt.step({"w": np.zeros(2)}, {"w": np.zeros(3)})
