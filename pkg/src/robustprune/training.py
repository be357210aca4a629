"""Natural and PGD adversarial training loops (optionally masked)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from robustprune.attack import AttackConfig, pgd_attack
from robustprune.data import BatchPlan, Dataset, batches
from robustprune.nn.network import (
    Model, apply_buffer_updates, backward, cross_entropy_loss, forward, trainable_names,
)
from robustprune.numerics import make_rng
from robustprune.optim import Optimizer, OptimizerConfig, Schedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", Schedule("constant", 1e-3)))
    adversarial: bool = True
    seed: int = 0
    # linear epsilon ramp over the first N epochs (0 = full strength from the start)
    epsilon_warmup: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epsilon_warmup < 0:
            raise ValueError("epsilon_warmup must be >= 0")


def warmup_attack(attack: AttackConfig, epoch: int, warmup: int) -> AttackConfig:
    """Scale epsilon and step size by (epoch+1)/warmup until the ramp ends."""
    if warmup <= 0 or epoch + 1 >= warmup:
        return attack
    f = (epoch + 1) / warmup
    return attack.replace(epsilon=attack.epsilon * f, step_size=attack.step_size * f)


def apply_mask(model: Model, mask: dict):
    for name, m in mask.items():
        if model.params[name].shape != m.shape:
            raise ValueError(f"mask for {name} has shape {m.shape}, parameter {model.params[name].shape}")
        model.params[name] = model.params[name] * m


def train_step(model: Model, opt: Optimizer, x, y, epoch, attack: AttackConfig | None, rng,
               penalty=None):
    """One optimiser step on a batch; returns the data loss and batch accuracy.

    ``penalty(params, grads)`` may add extra gradient terms in place and
    return the corresponding loss value.
    """
    if attack is not None:
        x = pgd_attack(model, x, y, attack, rng, mode="train")
    logits, cache = forward(model, x, "train")
    loss, dlogits = cross_entropy_loss(logits, y)
    grads, _ = backward(model, cache, dlogits)
    extra = penalty(model.params, grads) if penalty is not None else 0.0
    apply_buffer_updates(model, cache)
    opt.step(model.params, grads, epoch)
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return loss, extra, acc


def train_epoch(model, ds: Dataset, opt, cfg: TrainConfig, epoch, attack=None, rng=None, penalty=None,
                max_batches=None, batch_offset=0):
    plan = BatchPlan(cfg.batch_size, cfg.seed)
    all_batches = batches(ds, plan, epoch)
    if max_batches is not None:
        all_batches = all_batches[batch_offset:batch_offset + max_batches]
    losses, extras, accs = [], [], []
    for x, y in all_batches:
        loss, extra, acc = train_step(model, opt, x, y, epoch, attack, rng, penalty)
        losses.append(loss)
        extras.append(extra)
        accs.append(acc)
    return {"loss": float(np.mean(losses)) if losses else float("nan"),
            "penalty": float(np.mean(extras)) if extras else 0.0,
            "train_acc": float(np.mean(accs)) if accs else float("nan")}


def make_optimizer(model: Model, cfg: TrainConfig, mask=None) -> Optimizer:
    opt = Optimizer(cfg.optimizer, trainable_names(model.spec))
    if mask:
        opt.mask = dict(mask)
    return opt


def train(model: Model, ds: Dataset, cfg: TrainConfig, attack: AttackConfig | None = None,
          mask=None, callback=None, start_epoch=0, optimizer=None):
    """Train ``model`` in place for ``cfg.epochs`` epochs.

    With ``cfg.adversarial`` every batch is replaced by its PGD counterpart
    before the step.  A ``mask`` keeps pruned weights at exactly zero.
    ``callback(epoch, model, stats)`` runs after every epoch.
    """
    if cfg.adversarial and attack is None:
        raise ValueError("adversarial training needs an attack config")
    if mask:
        apply_mask(model, mask)
    opt = optimizer or make_optimizer(model, cfg, mask)
    history = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        rng = make_rng(cfg.seed, "pgd-train", epoch)
        atk = warmup_attack(attack, epoch - start_epoch, cfg.epsilon_warmup) if cfg.adversarial else None
        stats = train_epoch(model, ds, opt, cfg, epoch, atk, rng)
        stats["epoch"] = epoch
        history.append(stats)
        log.info("epoch %d loss %.4f train_acc %.4f", epoch, stats["loss"], stats["train_acc"])
        if callback is not None:
            callback(epoch, model, stats)
    return history
