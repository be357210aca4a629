"""Concurrent adversarial training and weight pruning in plain numpy."""
from robustprune.attack import AttackConfig, default_attack, pgd_attack
from robustprune.data import Dataset, load_cifar10_bin, load_dataset, load_idx, synthetic_blobs
from robustprune.evaluation import EvalReport, evaluate, select_best, transfer_eval, weight_histogram
from robustprune.nn import Checkpoint, Model, build_network, forward, load_checkpoint, save_checkpoint
from robustprune.optim import OptimizerConfig, Schedule, init_params
from robustprune.sparsity import (
    AdmmConfig, SparsityConstraint, concurrent_train_prune, membership, post_prune, project,
)
from robustprune.training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "default_attack", "pgd_attack",
    "Dataset", "load_cifar10_bin", "load_dataset", "load_idx", "synthetic_blobs",
    "EvalReport", "evaluate", "select_best", "transfer_eval", "weight_histogram",
    "Checkpoint", "Model", "build_network", "forward", "load_checkpoint", "save_checkpoint",
    "OptimizerConfig", "Schedule", "init_params",
    "AdmmConfig", "SparsityConstraint", "concurrent_train_prune", "membership", "post_prune", "project",
    "TrainConfig", "train",
]
