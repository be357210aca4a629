"""Parameter initialisation, learning-rate schedules and SGD/Adam."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from robustprune.nn.network import BN_SCALE, WEIGHT, Model, param_layout

INIT_METHODS = (
    "uniform", "normal", "xavier_uniform", "xavier_normal",
    "kaiming_uniform", "kaiming_normal", "orthogonal",
)


def fans(shape):
    """(fan_in, fan_out) of a conv ``[N, C, kh, kw]`` or fc ``[out, in]`` weight."""
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def _orthogonal(shape, rng):
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # make the decomposition unique so the draw is uniform over O(n)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q.reshape(shape)


def init_weight(shape, method, rng, uniform_range=0.1, normal_std=0.01):
    fan_in, fan_out = fans(shape)
    if method == "uniform":
        return rng.uniform(-uniform_range, uniform_range, shape)
    if method == "normal":
        return rng.normal(0.0, normal_std, shape)
    if method == "xavier_uniform":
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, shape)
    if method == "xavier_normal":
        return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), shape)
    # kaiming variants use the ReLU gain sqrt(2) on fan_in
    if method == "kaiming_uniform":
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, shape)
    if method == "kaiming_normal":
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
    if method == "orthogonal":
        return _orthogonal(shape, rng)
    raise ValueError(f"unknown init method {method!r}; expected one of {INIT_METHODS}")


def init_params(spec, method="kaiming_uniform", rng=None, uniform_range=0.1, normal_std=0.01) -> Model:
    """Fresh parameters for ``spec``: weights by ``method``, biases zero,
    batchnorm scale one / shift zero, running stats (0, 1)."""
    if method not in INIT_METHODS:
        raise ValueError(f"unknown init method {method!r}; expected one of {INIT_METHODS}")
    if rng is None:
        rng = np.random.default_rng()
    params = {}
    for name, shape, role in param_layout(spec):
        if role == WEIGHT:
            params[name] = init_weight(shape, method, rng, uniform_range, normal_std)
        elif role == BN_SCALE or name.endswith(".running_var"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return Model(spec, params)


# -- schedules ----------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"  # constant | step_decay | cosine
    lr: float = 1e-3
    milestones: tuple = ()
    factor: float = 0.1
    t_max: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind not in ("constant", "step_decay", "cosine"):
            raise ValueError(f"unknown schedule {self.kind!r}")


def lr_at(schedule: Schedule, epoch) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.kind == "step_decay":
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return schedule.lr * schedule.factor ** passed
    if schedule.kind == "cosine":
        e = min(epoch, schedule.t_max)
        return schedule.lr * (1.0 + math.cos(math.pi * e / schedule.t_max)) / 2.0
    return schedule.lr


# -- optimisers ---------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # adam | sgd
    schedule: Schedule = field(default_factory=Schedule)
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.momentum < 0:
            raise ValueError("momentum must be >= 0")

    @classmethod
    def named(cls, name, lr, epochs=1):
        """The three set-ups of the initialisation study: Adam, SGD and
        SGD with cosine annealing over ``epochs``."""
        if name == "adam":
            return cls("adam", Schedule("constant", lr))
        if name == "sgd":
            return cls("sgd", Schedule("constant", lr))
        if name == "cosanneal":
            return cls("sgd", Schedule("cosine", lr, t_max=max(1, epochs)))
        raise ValueError(f"unknown optimizer {name!r}")


class Optimizer:
    """Stateful SGD (with momentum) or Adam over a dict of named tensors.

    ``mask`` maps parameter names to 0/1 tensors; entries where the mask is
    zero are never touched, momentum included.
    """

    def __init__(self, config: OptimizerConfig, names=None):
        self.config = config
        self.names = list(names) if names is not None else None
        self.state = {}
        self.t = 0
        self.mask = {}

    def step(self, params: dict, grads: dict, epoch=0):
        cfg = self.config
        lr = lr_at(cfg.schedule, epoch)
        self.t += 1
        names = self.names if self.names is not None else list(grads)
        for name in names:
            g = grads[name]
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            m = self.mask.get(name)
            if m is not None:
                g = g * m
            if cfg.kind == "sgd":
                if cfg.momentum:
                    buf = self.state.get(name)
                    buf = g.copy() if buf is None else cfg.momentum * buf + g
                    self.state[name] = buf
                    upd = lr * buf
                else:
                    upd = lr * g
            else:
                mom, vel = self.state.get(name, (np.zeros_like(p), np.zeros_like(p)))
                mom = cfg.beta1 * mom + (1 - cfg.beta1) * g
                vel = cfg.beta2 * vel + (1 - cfg.beta2) * g * g
                self.state[name] = (mom, vel)
                mhat = mom / (1 - cfg.beta1 ** self.t)
                vhat = vel / (1 - cfg.beta2 ** self.t)
                upd = lr * mhat / (np.sqrt(vhat) + cfg.eps)
            new = p - upd
            if m is not None:
                new = np.where(m != 0, new, p)
            params[name] = new
        return params

