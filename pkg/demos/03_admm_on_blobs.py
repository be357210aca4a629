"""Watching ADMM close the gap between weights and their sparse copy.

A w=2 LeNet is trained adversarially on synthetic blobs while ADMM pulls the
weights towards a filter-sparse copy.  The printed residual max|theta - z|
shrinks over the outer iterations, after which hard pruning costs little.
"""
from robustprune import (
    AdmmConfig, AttackConfig, OptimizerConfig, Schedule, SparsityConstraint, TrainConfig, build_network,
    concurrent_train_prune, evaluate, init_params, synthetic_blobs,
)
from robustprune.numerics import make_rng

ds = synthetic_blobs(600, separation=1.5, seed=1)
test = synthetic_blobs(1200, separation=1.5, seed=1).subset(indices=range(600, 1200))
model = init_params(build_network("mnist_lenet", 2), "kaiming_uniform", make_rng(0, "init"))
attack = AttackConfig(0.05, 0.02, 5)
cfg = TrainConfig(epochs=1, batch_size=50, optimizer=OptimizerConfig("adam", Schedule("constant", 2e-3)))
constraint = SparsityConstraint.from_keep_ratio(model.spec, "filter", 0.5)


def show(k, m, state, row):
    print(f"iteration {k:2d}  loss {row.get('loss', float('nan')):.3f}  max residual {row['max_residual']:.4f}")


ckpt, state = concurrent_train_prune(model, constraint, AdmmConfig(rho=1.0, iterations=10, retrain_epochs=2),
                                     cfg, attack, ds, on_iteration=show)
print("pruned:", evaluate(ckpt.model, test, attack))
