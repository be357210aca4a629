"""The desk-scale MNIST story in one table.

Runs (or reloads) the shared pipeline used by the acceptance suite: w=1
LeNets trained adversarially from scratch, a robust w=4 LeNet, its 4->1
compressions under each scheme, and one-shot pruning with and without
retraining.  A cold run takes one to two hours on one core.
"""
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from desk_pipeline import SCHEMES, SCRATCH_SEEDS, DeskPipeline  # noqa: E402

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
desk = DeskPipeline()


def line(label, r):
    print(f"{label:<28}{r['natural_accuracy']:8.2f}{r['adversarial_accuracy']:8.2f}")


print(f"{'model':<28}{'nat':>8}{'adv':>8}")
for s in SCRATCH_SEEDS:
    line(f"scratch w=1 seed {s}", desk.scratch(s))
line("dense w=4", desk.dense())
for scheme in SCHEMES:
    line(f"concurrent 4->1 {scheme}", desk.concurrent(scheme))
post = desk.post("filter")
line("post-prune filter", post["no_retrain"])
line("post-prune filter + retrain", post["retrain"])
