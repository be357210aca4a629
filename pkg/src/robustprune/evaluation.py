"""Natural/adversarial accuracy, model selection, transfer matrices and
weight histograms."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from robustprune.attack import AttackConfig, pgd_attack
from robustprune.data import Dataset
from robustprune.nn.network import Model, forward, per_sample_cross_entropy, prunable_names
from robustprune.numerics import make_rng


@dataclass
class EvalReport:
    natural_correct: int
    adversarial_correct: int
    total: int
    natural_loss: float
    adversarial_loss: float
    nonzeros: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)

    @property
    def natural_accuracy(self) -> float:
        return 100.0 * self.natural_correct / self.total

    @property
    def adversarial_accuracy(self) -> float:
        return 100.0 * self.adversarial_correct / self.total

    @property
    def average_loss(self) -> float:
        return 0.5 * (self.natural_loss + self.adversarial_loss)

    def to_dict(self):
        d = asdict(self)
        d.update(natural_accuracy=self.natural_accuracy, adversarial_accuracy=self.adversarial_accuracy,
                 average_loss=self.average_loss)
        return d

    def __str__(self):
        return f"{self.natural_accuracy:.2f}/{self.adversarial_accuracy:.2f}"


def nonzero_counts(model: Model):
    names = prunable_names(model.spec)
    return ({n: int(np.count_nonzero(model.params[n])) for n in names},
            {n: int(model.params[n].size) for n in names})


def _check_shapes(model, ds):
    if tuple(ds.input_shape) != tuple(model.spec.input_shape):
        raise ValueError(f"dataset images {ds.input_shape} do not match model input {model.spec.input_shape}")


def predict(model: Model, x, batch_size=500):
    out = []
    for s in range(0, len(x), batch_size):
        logits, _ = forward(model, x[s:s + batch_size], "eval")
        out.append(logits)
    return np.concatenate(out) if out else np.zeros((0, 10))


def adversarial_examples(model: Model, ds: Dataset, attack: AttackConfig, seed=0, batch_size=500):
    xs = []
    for b, s in enumerate(range(0, len(ds), batch_size)):
        rng = make_rng(seed, "pgd-eval", b)
        xs.append(pgd_attack(model, ds.images[s:s + batch_size], ds.labels[s:s + batch_size], attack, rng))
    return np.concatenate(xs)


def evaluate(model: Model, ds: Dataset, attack: AttackConfig, seed=0, batch_size=500,
             x_adv=None) -> EvalReport:
    """Top-1 accuracy on clean and PGD inputs over the whole split.

    Adversarial examples are generated batch by batch with a seed-derived
    random start, so results are reproducible for a given ``seed``.
    """
    _check_shapes(model, ds)
    nat_logits = predict(model, ds.images, batch_size)
    if x_adv is None:
        x_adv = adversarial_examples(model, ds, attack, seed, batch_size)
    adv_logits = predict(model, x_adv, batch_size)
    y = ds.labels
    nz, sizes = nonzero_counts(model)
    return EvalReport(
        natural_correct=int(np.sum(nat_logits.argmax(1) == y)),
        adversarial_correct=int(np.sum(adv_logits.argmax(1) == y)),
        total=len(y),
        natural_loss=float(per_sample_cross_entropy(nat_logits, y).mean()),
        adversarial_loss=float(per_sample_cross_entropy(adv_logits, y).mean()),
        nonzeros=nz, sizes=sizes, attack=asdict(attack),
    )


def select_best(series, ds: Dataset = None, attack: AttackConfig = None, seed=0, reports=None):
    """Index and item of the series entry with the lowest mean of natural and
    adversarial test loss; ties go to the earliest entry.

    ``series`` holds models (or checkpoints with a ``.model``).  Precomputed
    ``reports`` skip the evaluation.
    """
    series = list(series)
    if not series:
        raise ValueError("select_best needs a non-empty series")
    if reports is None:
        reports = [evaluate(getattr(m, "model", m), ds, attack, seed) for m in series]
    losses = [r.average_loss for r in reports]
    best = int(np.argmin(losses))
    return best, series[best], reports[best]


@dataclass
class TransferMatrix:
    sources: list
    targets: list
    accuracy: np.ndarray  # [source, target], percent

    def self_attack_is_minimum(self):
        """For each model present as both source and target: is attacking it
        with its own examples the lowest accuracy among all sources?"""
        out = {}
        for j, t in enumerate(self.targets):
            if t in self.sources:
                i = self.sources.index(t)
                out[t] = bool(self.accuracy[i, j] <= self.accuracy[:, j].min())
        return out

    def to_rows(self):
        rows = [["source"] + list(self.targets)]
        for i, s in enumerate(self.sources):
            rows.append([s] + [f"{v:.2f}" for v in self.accuracy[i]])
        return rows


def transfer_eval(sources: dict, targets: dict, ds: Dataset, attack: AttackConfig, seed=0) -> TransferMatrix:
    """Accuracy of every target on PGD examples crafted against every source."""
    acc = np.zeros((len(sources), len(targets)))
    for i, (sname, smodel) in enumerate(sources.items()):
        _check_shapes(smodel, ds)
        x_adv = adversarial_examples(smodel, ds, attack, seed)
        for j, tmodel in enumerate(targets.values()):
            pred = predict(tmodel, x_adv).argmax(1)
            acc[i, j] = 100.0 * np.sum(pred == ds.labels) / len(ds)
    return TransferMatrix(list(sources), list(targets), acc)


def weight_histogram(model: Model, bins=50, names=None):
    """Magnitude histograms per prunable tensor and globally.

    Bins are symmetric and linear over [-max|w|, max|w|]; exact zeros are
    counted in their own bucket and excluded from the linear bins.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    names = names or prunable_names(model.spec)
    allw = np.concatenate([model.params[n].ravel() for n in names])
    top = float(np.abs(allw).max()) if allw.size else 0.0
    edges = np.linspace(-top, top, bins + 1) if top > 0 else np.linspace(-1, 1, bins + 1)

    def one(w):
        nz = w[w != 0]
        counts, _ = np.histogram(nz, edges)
        zeros = int(w.size - nz.size)
        return {"counts": counts, "zeros": zeros, "total": int(w.size),
                "zero_fraction": zeros / w.size if w.size else 0.0}

    layers = {n: one(model.params[n].ravel()) for n in names}
    return {"edges": edges, "layers": layers, "global": one(allw)}


def write_histogram_csv(hist, path):
    edges = hist["edges"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["tensor", "bin_lo", "bin_hi", "count"])
        for name, h in [("global", hist["global"])] + list(hist["layers"].items()):
            wr.writerow([name, "zero", "zero", h["zeros"]])
            for lo, hi, c in zip(edges[:-1], edges[1:], h["counts"]):
                wr.writerow([name, f"{lo:.8g}", f"{hi:.8g}", int(c)])
