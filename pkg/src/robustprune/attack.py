"""Sign-gradient PGD under an l-infinity budget, with uniform random start."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robustprune.nn.network import Model, backward, cross_entropy_loss, forward


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.3
    step_size: float = 0.01
    steps: int = 40
    random_start: bool = True

    def __post_init__(self):
        if self.epsilon < 0 or self.step_size < 0 or self.steps < 0:
            raise ValueError("epsilon, step_size and steps must be non-negative")

    def replace(self, **kw) -> "AttackConfig":
        return AttackConfig(**{**self.__dict__, **kw})


def default_attack(dataset: str) -> AttackConfig:
    if dataset == "mnist":
        return AttackConfig(epsilon=0.3, step_size=0.01, steps=40, random_start=True)
    if dataset == "cifar":
        return AttackConfig(epsilon=8 / 255, step_size=2 / 255, steps=10, random_start=True)
    raise ValueError(f"unknown dataset tag {dataset!r}; expected 'mnist' or 'cifar'")


def feasible_box(x, epsilon):
    """Elementwise bounds of the epsilon-ball around ``x`` intersected with [0, 1].

    ``x - eps`` can round to a point whose computed distance from ``x`` is one
    ulp above ``eps``; such bounds are nudged inwards so that
    ``abs(bound - x) <= eps`` holds in floating point too.
    """
    lo = np.maximum(x - epsilon, 0.0)
    hi = np.minimum(x + epsilon, 1.0)
    while np.any(bad := (x - lo) > epsilon):
        lo = np.where(bad, np.nextafter(lo, x), lo)
    while np.any(bad := (hi - x) > epsilon):
        hi = np.where(bad, np.nextafter(hi, x), hi)
    return lo, hi


def project(x_adv, lo, hi):
    return np.minimum(np.maximum(x_adv, lo), hi)


def input_gradient(model: Model, x, y, mode="eval"):
    logits, cache = forward(model, x, mode)
    loss, dlogits = cross_entropy_loss(logits, y)
    _, dx = backward(model, cache, dlogits, param_grads=False)
    return loss, dx


def pgd_attack(model: Model, x, y, cfg: AttackConfig, rng=None, mode="eval"):
    """Untargeted PGD maximising the mean cross-entropy of the batch.

    Output entries are guaranteed to lie in
    ``[max(0, x - eps), min(1, x + eps)]``.
    """
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0 or (cfg.steps == 0 and not cfg.random_start):
        return x.copy()
    lo, hi = feasible_box(x, cfg.epsilon)
    x_adv = x
    if cfg.random_start:
        if rng is None:
            rng = np.random.default_rng()
        x_adv = project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape), lo, hi)
    for _ in range(cfg.steps):
        _, g = input_gradient(model, x_adv, y, mode)
        x_adv = project(x_adv + cfg.step_size * np.sign(g), lo, hi)
    return x_adv
