"""ADMM-based concurrent adversarial training and pruning.

Three sparsity schemes are supported, each an upper bound on a count of
non-zero "units" in a layer's weight tensor viewed as ``[N, C, H, W]``
(fc weights are ``[out, in]`` and behave as ``[out, in, 1, 1]``):

* ``filter``    -- units are whole filters ``v[n, :, :, :]``
* ``column``    -- units are positions ``v[:, c, h, w]`` shared by all filters
* ``irregular`` -- units are single weights

The Euclidean projection onto such a set keeps the ``budget`` units with the
largest squared Frobenius norm and zeroes the rest.  Ties are broken towards
the lower unit index.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from robustprune.attack import AttackConfig, pgd_attack
from robustprune.data import Dataset
from robustprune.nn.checkpoint import Checkpoint
from robustprune.nn.network import Model, backward, cross_entropy_loss, forward, param_layout, prunable_names
from robustprune.numerics import make_rng
from robustprune.training import TrainConfig, apply_mask, make_optimizer, train, train_epoch

log = logging.getLogger(__name__)

SCHEMES = ("filter", "column", "irregular")


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown sparsity scheme {scheme!r}; expected one of {SCHEMES}")


def unit_count(shape, scheme) -> int:
    _check_scheme(scheme)
    if scheme == "filter":
        return int(shape[0])
    if scheme == "column":
        return int(np.prod(shape[1:]))
    return int(np.prod(shape))


def unit_scores(v, scheme):
    """Squared Frobenius norm of every unit, flattened in index order."""
    v = np.asarray(v, dtype=np.float64)
    if scheme == "filter":
        return np.einsum("ij,ij->i", v.reshape(v.shape[0], -1), v.reshape(v.shape[0], -1))
    if scheme == "column":
        flat = v.reshape(v.shape[0], -1)
        return np.einsum("ij,ij->j", flat, flat)
    if scheme == "irregular":
        return (v * v).ravel()
    _check_scheme(scheme)


def _expand(unit_mask, shape, scheme):
    if scheme == "filter":
        return np.broadcast_to(unit_mask.reshape((shape[0],) + (1,) * (len(shape) - 1)), shape)
    if scheme == "column":
        return np.broadcast_to(unit_mask.reshape((1,) + tuple(shape[1:])), shape)
    return unit_mask.reshape(shape)


def top_units(scores, k):
    """Boolean mask of the ``k`` largest scores; equal scores prefer lower index."""
    order = np.argsort(-scores, kind="stable")
    keep = np.zeros(scores.shape, dtype=bool)
    keep[order[:k]] = True
    return keep


def keep_mask(v, scheme, budget):
    """Elementwise 0/1 mask of the units kept by the projection."""
    v = np.asarray(v, dtype=np.float64)
    n = unit_count(v.shape, scheme)
    if not 1 <= budget <= n:
        raise ValueError(f"{scheme} budget {budget} outside [1, {n}] for tensor of shape {v.shape}")
    keep = top_units(unit_scores(v, scheme), int(budget))
    return np.ascontiguousarray(_expand(keep, v.shape, scheme), dtype=np.float64)


def project(v, scheme, budget):
    v = np.asarray(v, dtype=np.float64)
    return np.where(keep_mask(v, scheme, budget) != 0, v, 0.0)


def project_filter(v, alpha):
    return project(v, "filter", alpha)


def project_column(v, beta):
    return project(v, "column", beta)


def project_irregular(v, gamma):
    return project(v, "irregular", gamma)


def nonzero_units(v, scheme) -> int:
    v = np.asarray(v)
    if scheme == "filter":
        return int(np.count_nonzero(np.any(v.reshape(v.shape[0], -1) != 0, axis=1)))
    if scheme == "column":
        return int(np.count_nonzero(np.any(v.reshape(v.shape[0], -1) != 0, axis=0)))
    _check_scheme(scheme)
    return int(np.count_nonzero(v))


@dataclass
class SparsityConstraint:
    """A scheme plus a per-tensor budget on non-zero units."""

    scheme: str
    budgets: dict
    keep_ratio: float | None = None

    def __post_init__(self):
        _check_scheme(self.scheme)

    @classmethod
    def from_keep_ratio(cls, spec, scheme, keep_ratio):
        """Uniform ratio: every prunable tensor keeps ``max(1, round(r * units))``.

        Under the filter scheme the 10-way classifier is left dense, since
        removing its rows would remove classes.
        """
        _check_scheme(scheme)
        if not 0 < keep_ratio <= 1:
            raise ValueError(f"keep ratio must lie in (0, 1], got {keep_ratio}")
        shapes = {n: s for n, s, _ in param_layout(spec)}
        budgets = {}
        for name in prunable_names(spec):
            units = unit_count(shapes[name], scheme)
            if scheme == "filter" and name == spec.classifier:
                budgets[name] = units
            else:
                budgets[name] = min(units, max(1, math.floor(keep_ratio * units + 0.5)))
        return cls(scheme, budgets, keep_ratio)

    def validate(self, spec):
        shapes = {n: s for n, s, _ in param_layout(spec)}
        for name, b in self.budgets.items():
            if name not in shapes:
                raise ValueError(f"budget for unknown tensor {name!r}")
            units = unit_count(shapes[name], self.scheme)
            if not 1 <= b <= units:
                raise ValueError(f"infeasible {self.scheme} budget {b} for {name} ({units} units)")
        return self

    def to_dict(self):
        return {"scheme": self.scheme, "keep_ratio": self.keep_ratio, "budgets": dict(self.budgets)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["scheme"], {k: int(v) for k, v in d["budgets"].items()}, d.get("keep_ratio"))


def membership(theta, constraint: SparsityConstraint, name) -> bool:
    """Whether ``theta`` lies in the constraint set of tensor ``name``."""
    return nonzero_units(theta, constraint.scheme) <= constraint.budgets[name]


def model_membership(model: Model, constraint: SparsityConstraint) -> dict:
    return {n: membership(model.params[n], constraint, n) for n in constraint.budgets}


# -- ADMM pieces ---------------------------------------------------------------

def admm_z_update(theta: dict, u: dict, constraint: SparsityConstraint) -> dict:
    return {n: project(theta[n] + u[n], constraint.scheme, b) for n, b in constraint.budgets.items()}


def admm_dual_update(u: dict, theta: dict, z: dict, rho) -> dict:
    return {n: u[n] + rho * (theta[n] - z[n]) for n in u}


def admm_penalty(params: dict, z: dict, u: dict, rho, grads: dict | None = None) -> float:
    """``rho/2 * sum ||theta - z + u||^2``; adds its gradient to ``grads``."""
    total = 0.0
    for n in z:
        r = params[n] - z[n] + u[n]
        total += float(np.dot(r.ravel(), r.ravel()))
        if grads is not None:
            grads[n] = grads[n] + rho * r
    return 0.5 * rho * total


def admm_subproblem1_loss(model: Model, z, u, rho, x, y, attack: AttackConfig | None, rng=None, mode="train"):
    """Adversarial loss on ``(x, y)`` plus the augmented-Lagrangian penalty.

    Returns ``(loss, grads, cache)``; ``cache`` carries batchnorm updates.
    """
    if attack is not None:
        x = pgd_attack(model, x, y, attack, rng, mode=mode)
    logits, cache = forward(model, x, mode)
    loss, dlogits = cross_entropy_loss(logits, y)
    grads, _ = backward(model, cache, dlogits)
    loss += admm_penalty(model.params, z, u, rho, grads)
    return loss, grads, cache


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1e-3
    iterations: int = 30
    sub_epochs: int = 1
    # Algorithm-as-written reading: a fixed number of batches per iteration
    batches_per_iteration: int | None = None
    retrain_epochs: int | None = None

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.iterations < 0 or self.sub_epochs < 0:
            raise ValueError("iterations and sub_epochs must be >= 0")


@dataclass
class AdmmState:
    z: dict
    u: dict
    rho: float
    iteration: int = 0
    log: list = field(default_factory=list)


def init_admm(model: Model, constraint: SparsityConstraint, rho) -> AdmmState:
    theta = model.params
    z = {n: project(theta[n], constraint.scheme, b) for n, b in constraint.budgets.items()}
    u = {n: np.zeros_like(theta[n]) for n in constraint.budgets}
    return AdmmState(z, u, rho)


def primal_residuals(theta, z):
    return {n: float(np.max(np.abs(theta[n] - z[n]))) for n in z}


def hard_prune(model: Model, constraint: SparsityConstraint):
    """Project every constrained tensor; returns ``(pruned_model, masks)``."""
    out = model.copy()
    masks = {}
    for n, b in constraint.budgets.items():
        masks[n] = keep_mask(model.params[n], constraint.scheme, b)
        out.params[n] = np.where(masks[n] != 0, model.params[n], 0.0)
    return out, masks


def masked_retrain(model: Model, masks: dict, ds: Dataset, cfg: TrainConfig, attack: AttackConfig | None,
                   callback=None, start_epoch=0) -> Model:
    """Adversarial training that never revives a pruned weight."""
    for n, m in masks.items():
        if model.params[n].shape != m.shape:
            raise ValueError(f"mask for {n} has shape {m.shape}, parameter {model.params[n].shape}")
    model = model.copy()
    apply_mask(model, masks)
    if cfg.epochs:
        train(model, ds, cfg, attack, mask=masks, callback=callback, start_epoch=start_epoch)
    for n, m in masks.items():
        assert not np.any(model.params[n][m == 0]), f"pruned weights of {n} became non-zero"
    return model


def concurrent_train_prune(model: Model, constraint: SparsityConstraint, admm: AdmmConfig, cfg: TrainConfig,
                           attack: AttackConfig | None, ds: Dataset, retrain: TrainConfig | None = None,
                           on_iteration=None, on_retrain_epoch=None):
    """ADMM adversarial training towards ``constraint``, then hard pruning and
    masked retraining.

    Each outer iteration runs ``admm.sub_epochs`` epochs (or
    ``admm.batches_per_iteration`` batches) of the optimiser on the
    adversarial loss plus the quadratic penalty, then the projection
    (z-update) and the dual update.  One optimiser instance persists across
    iterations.  Returns ``(checkpoint, state)`` where ``state.log`` has one
    row per outer iteration.
    """
    constraint.validate(model.spec)
    model = model.copy()
    state = init_admm(model, constraint, admm.rho)
    opt = make_optimizer(model, cfg)
    epoch = 0
    per_epoch = math.ceil(len(ds) / cfg.batch_size)

    def penalty(params, grads):
        return admm_penalty(params, state.z, state.u, state.rho, grads)

    for k in range(1, admm.iterations + 1):
        stats = []
        if admm.batches_per_iteration:
            start = (k - 1) * admm.batches_per_iteration
            epoch, offset = divmod(start, per_epoch)
            rng = make_rng(cfg.seed, "pgd-admm", k)
            stats.append(train_epoch(model, ds, opt, cfg, epoch, attack, rng, penalty,
                                     max_batches=admm.batches_per_iteration, batch_offset=offset))
        else:
            for _ in range(admm.sub_epochs):
                rng = make_rng(cfg.seed, "pgd-admm", epoch)
                stats.append(train_epoch(model, ds, opt, cfg, epoch, attack, rng, penalty))
                epoch += 1
        state.z = admm_z_update(model.params, state.u, constraint)
        for n, zn in state.z.items():
            assert membership(zn, constraint, n), f"z for {n} violates its budget"
        state.u = admm_dual_update(state.u, model.params, state.z, state.rho)
        state.iteration = k
        row = {
            "iteration": k,
            "loss": float(np.mean([s["loss"] for s in stats])) if stats else float("nan"),
            "penalty": float(np.mean([s["penalty"] for s in stats])) if stats else 0.0,
            "train_acc": float(np.mean([s["train_acc"] for s in stats])) if stats else float("nan"),
            "residuals": primal_residuals(model.params, state.z),
        }
        row["max_residual"] = max(row["residuals"].values()) if row["residuals"] else 0.0
        state.log.append(row)
        log.info("admm %d loss %.4f max residual %.4g", k, row["loss"], row["max_residual"])
        if on_iteration is not None:
            on_iteration(k, model, state, row)

    pruned, masks = hard_prune(model, constraint)
    retrain = retrain if retrain is not None else cfg
    if admm.retrain_epochs is not None:
        retrain = dataclasses.replace(retrain, epochs=admm.retrain_epochs)
    pruned = masked_retrain(pruned, masks, ds, retrain, attack, callback=on_retrain_epoch)
    meta = {"kind": "concurrent_prune", "constraint": constraint.to_dict(),
            "admm": {"rho": admm.rho, "iterations": admm.iterations, "sub_epochs": admm.sub_epochs,
                     "batches_per_iteration": admm.batches_per_iteration},
            "retrain_epochs": retrain.epochs, "seed": cfg.seed}
    return Checkpoint(pruned, masks, meta), state


def post_prune(model: Model, constraint: SparsityConstraint, retrain: bool, cfg: TrainConfig | None = None,
               attack: AttackConfig | None = None, ds: Dataset | None = None, evaluate_on=None,
               eval_attack: AttackConfig | None = None, eval_seed=0):
    """One-shot projection of a trained model, optionally followed by masked
    adversarial retraining.

    With ``evaluate_on`` (a test Dataset) the return value carries
    ``{"before": EvalReport, "pruned": EvalReport, "after": EvalReport}``.
    """
    from robustprune.evaluation import evaluate

    constraint.validate(model.spec)
    pruned, masks = hard_prune(model, constraint)
    reports = {}
    if evaluate_on is not None:
        ea = eval_attack or attack
        reports["before"] = evaluate(model, evaluate_on, ea, eval_seed)
        reports["pruned"] = evaluate(pruned, evaluate_on, ea, eval_seed)
    if retrain:
        if cfg is None or ds is None:
            raise ValueError("retraining needs a TrainConfig and a training set")
        pruned = masked_retrain(pruned, masks, ds, cfg, attack)
    if evaluate_on is not None:
        reports["after"] = evaluate(pruned, evaluate_on, eval_attack or attack, eval_seed) if retrain \
            else reports["pruned"]
    meta = {"kind": "post_prune", "retrain": bool(retrain), "constraint": constraint.to_dict()}
    return Checkpoint(pruned, masks, meta), reports
