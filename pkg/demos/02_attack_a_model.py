"""Natural accuracy is not robustness.

Trains a w=2 LeNet naturally for two epochs on the bundled MNIST subset,
then evaluates it under PGD with growing epsilon.  Accuracy falls off a
cliff well before epsilon = 0.3.  Takes about a minute.
"""
from robustprune import AttackConfig, OptimizerConfig, Schedule, TrainConfig, build_network, evaluate, init_params, train
from robustprune.data import load_mnist
from robustprune.numerics import make_rng

train_ds, test_ds = load_mnist(split="train"), load_mnist(split="test").subset(500)
model = init_params(build_network("mnist_lenet", 2), "kaiming_uniform", make_rng(0, "init"))
cfg = TrainConfig(epochs=2, batch_size=64, adversarial=False,
                  optimizer=OptimizerConfig("adam", Schedule("constant", 1e-3)))
train(model, train_ds, cfg)

for eps in (0.0, 0.05, 0.1, 0.2, 0.3):
    rep = evaluate(model, test_ds, AttackConfig(eps, 0.01, 40))
    print(f"eps={eps:.2f}  natural/adversarial {rep}")
