"""What each sparsity scheme keeps.

Projects one small random conv kernel onto the filter, column and irregular
sets with the same keep ratio and prints which entries survive.
"""
import numpy as np

from robustprune.numerics import make_rng
from robustprune.sparsity import project, unit_count

w = make_rng(0, "demo").standard_normal((4, 2, 2, 2)).round(2)
print("kernel (filters x channels x 2 x 2), flattened per filter:")
print(w.reshape(4, -1))

for scheme in ("filter", "column", "irregular"):
    units = unit_count(w.shape, scheme)
    budget = max(1, units // 4)
    p = project(w, scheme, budget)
    print(f"\n{scheme}: keep {budget} of {units} units, "
          f"squared distance {np.sum((w - p) ** 2):.3f}")
    print((p != 0).reshape(4, -1).astype(int))
