"""End-to-end study drivers: scratch baselines, concurrent pruning grids,
lottery-ticket runs, the initializer study and post-pruning comparisons.

Every driver takes an :class:`ExperimentConfig`, writes ``results.csv``,
``results.json`` (rows plus a profile header) and ``manifest.json`` under
``<output_dir>/<experiment>/`` and returns the rows.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from robustprune.attack import AttackConfig
from robustprune.data import Dataset, data_root, load_dataset
from robustprune.evaluation import EvalReport, evaluate
from robustprune.nn import Checkpoint, Model, build_network, load_checkpoint, param_layout, save_checkpoint
from robustprune.nn.network import FAMILIES
from robustprune.numerics import make_rng
from robustprune.optim import INIT_METHODS, OptimizerConfig, Schedule, init_params
from robustprune.sparsity import (
    SCHEMES, AdmmConfig, SparsityConstraint, concurrent_train_prune, masked_retrain, post_prune,
)
from robustprune.training import TrainConfig, train

log = logging.getLogger(__name__)

EXPERIMENTS = ("scratch", "prune_grid", "lottery", "init_study", "post_prune")
OPTIMIZER_NAMES = ("adam", "sgd", "cosanneal")


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _attack_dict(eps, step, steps, random_start=True):
    return {"epsilon": eps, "step_size": step, "steps": steps, "random_start": random_start}


@dataclass
class ExperimentConfig:
    experiment: str = "scratch"
    profile: str = "desk"
    dataset: str = "mnist"
    data_dir: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None
    family: str = "mnist_lenet"
    widths: list = field(default_factory=lambda: [1])
    pairs: list = field(default_factory=list)
    schemes: list = field(default_factory=lambda: ["filter"])
    keep_ratio: float | None = None
    seeds: list = field(default_factory=lambda: [0])
    init: str = "kaiming_uniform"
    init_methods: list = field(default_factory=lambda: list(INIT_METHODS))
    optimizer: str = "adam"
    optimizers: list = field(default_factory=lambda: list(OPTIMIZER_NAMES))
    lr: float = 1e-3
    lr_milestones: list = field(default_factory=list)
    lr_factor: float = 0.1
    batch_size: int = 64
    epochs: int = 10
    pretrain_epochs: int | None = None
    retrain_epochs: int = 3
    epsilon_warmup: int = 0
    natural_baseline: bool = True
    selection: str = "last"
    train_attack: dict = field(default_factory=lambda: _attack_dict(0.3, 0.04, 10))
    eval_attack: dict = field(default_factory=lambda: _attack_dict(0.3, 0.01, 40))
    eval_seed: int = 0
    admm: dict = field(default_factory=lambda: {"rho": 1e-3, "iterations": 30, "sub_epochs": 1,
                                                "batches_per_iteration": None})
    lottery_masked: bool = False
    post_prune_retrain: bool = True
    output_dir: str = "runs"
    use_cache: bool = True
    # single-command plumbing (train/prune/attack/eval/transfer/histogram)
    checkpoint: str | None = None
    sources: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    concurrent: bool = True
    adversarial: bool = True
    width: int | None = None
    seed: int = 0
    bins: int = 50
    out: str | None = None

    # -- loading and validation ------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown field")
        cfg = cls()
        for key, value in raw.items():
            if key in ("train_attack", "eval_attack", "admm"):
                if not isinstance(value, dict):
                    raise ConfigError(key, "expected a mapping")
                merged = dict(getattr(cfg, key))
                for sub in value:
                    if sub not in merged:
                        raise ConfigError(f"{key}.{sub}", "unknown field")
                merged.update(value)
                value = merged
            setattr(cfg, key, value)
        return cfg.validate()

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
        for item in overrides:
            apply_override(raw, item)
        return cls.from_dict(raw)

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        def pos_int(name, v, allow_none=False, minimum=1):
            if v is None and allow_none:
                return
            need(isinstance(v, int) and not isinstance(v, bool) and v >= minimum, name,
                 f"expected an integer >= {minimum}, got {v!r}")

        need(self.experiment in EXPERIMENTS, "experiment", f"expected one of {EXPERIMENTS}")
        need(self.profile in ("desk", "full"), "profile", "expected 'desk' or 'full'")
        need(self.dataset in ("mnist", "cifar"), "dataset", "expected 'mnist' or 'cifar'")
        need(self.family in FAMILIES, "family", f"expected one of {FAMILIES}")
        want_channels = 1 if self.dataset == "mnist" else 3
        need(build_network(self.family, 1).input_shape[0] == want_channels, "family",
             f"{self.family} does not take {self.dataset} images")
        pos_int("train_subset", self.train_subset, allow_none=True)
        pos_int("test_subset", self.test_subset, allow_none=True)
        need(isinstance(self.widths, list) and self.widths, "widths", "expected a non-empty list")
        for w in self.widths:
            pos_int("widths", w)
        need(isinstance(self.pairs, list), "pairs", "expected a list of [source, target] pairs")
        for p in self.pairs:
            need(isinstance(p, (list, tuple)) and len(p) == 2, "pairs", f"bad pair {p!r}")
            pos_int("pairs", p[0])
            pos_int("pairs", p[1])
            need(p[0] > p[1], "pairs", f"source width must exceed target width, got {p[0]}->{p[1]}")
        need(isinstance(self.schemes, list) and self.schemes, "schemes", "expected a non-empty list")
        for s in self.schemes:
            need(s in SCHEMES, "schemes", f"unknown scheme {s!r}")
        if self.keep_ratio is not None:
            need(isinstance(self.keep_ratio, (int, float)) and 0 < self.keep_ratio <= 1, "keep_ratio",
                 "expected a number in (0, 1]")
        need(isinstance(self.seeds, list) and self.seeds, "seeds", "expected a non-empty list")
        for s in self.seeds:
            pos_int("seeds", s, minimum=0)
        need(self.init in INIT_METHODS, "init", f"expected one of {INIT_METHODS}")
        for m in self.init_methods:
            need(m in INIT_METHODS, "init_methods", f"unknown init {m!r}")
        need(self.optimizer in OPTIMIZER_NAMES, "optimizer", f"expected one of {OPTIMIZER_NAMES}")
        for o in self.optimizers:
            need(o in OPTIMIZER_NAMES, "optimizers", f"unknown optimizer {o!r}")
        need(isinstance(self.lr, (int, float)) and self.lr > 0, "lr", "expected a positive number")
        need(isinstance(self.lr_factor, (int, float)) and self.lr_factor > 0, "lr_factor", "must be positive")
        pos_int("batch_size", self.batch_size)
        pos_int("epochs", self.epochs, minimum=0)
        pos_int("pretrain_epochs", self.pretrain_epochs, allow_none=True, minimum=0)
        pos_int("retrain_epochs", self.retrain_epochs, minimum=0)
        pos_int("epsilon_warmup", self.epsilon_warmup, minimum=0)
        pos_int("eval_seed", self.eval_seed, minimum=0)
        pos_int("seed", self.seed, minimum=0)
        pos_int("bins", self.bins)
        pos_int("width", self.width, allow_none=True)
        need(self.selection in ("last", "best"), "selection", "expected 'last' or 'best'")
        for key in ("train_attack", "eval_attack"):
            try:
                AttackConfig(**getattr(self, key))
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from None
        try:
            self.admm_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError("admm", str(exc)) from None
        return self

    # -- derived objects ---------------------------------------------------------

    def attack(self, which="train") -> AttackConfig:
        return AttackConfig(**(self.train_attack if which == "train" else self.eval_attack))

    def admm_config(self) -> AdmmConfig:
        a = self.admm
        return AdmmConfig(rho=float(a["rho"]), iterations=int(a["iterations"]),
                          sub_epochs=int(a.get("sub_epochs", 1)),
                          batches_per_iteration=a.get("batches_per_iteration"),
                          retrain_epochs=self.retrain_epochs)

    def optimizer_config(self, name=None, epochs=None) -> OptimizerConfig:
        name = name or self.optimizer
        epochs = self.epochs if epochs is None else epochs
        if name == "adam" and self.lr_milestones:
            return OptimizerConfig("adam", Schedule("step_decay", self.lr, tuple(self.lr_milestones),
                                                    self.lr_factor))
        return OptimizerConfig.named(name, self.lr, epochs)

    def train_config(self, seed, epochs=None, adversarial=True, optimizer=None, warmup=True) -> TrainConfig:
        epochs = self.epochs if epochs is None else epochs
        return TrainConfig(epochs=epochs, batch_size=self.batch_size,
                           optimizer=self.optimizer_config(optimizer, epochs), adversarial=adversarial,
                           seed=seed, epsilon_warmup=self.epsilon_warmup if warmup else 0)

    def header(self):
        """Profile summary stamped on every report."""
        return {
            "profile": self.profile,
            "dataset": self.dataset,
            "train_subset": self.train_subset,
            "test_subset": self.test_subset,
            "epochs": self.epochs,
            "pretrain_epochs": self.pretrain_epochs,
            "retrain_epochs": self.retrain_epochs,
            "epsilon_warmup": self.epsilon_warmup,
            "train_attack": self.train_attack,
            "eval_attack": self.eval_attack,
            "admm": self.admm,
            "selection": self.selection,
            "note": ("desk-scale profile: reduced data and epochs; numbers are not comparable "
                     "to full-scale runs") if self.profile == "desk" else "full-scale profile",
        }


def apply_override(raw: dict, item: str):
    """Apply ``key=value`` (``a.b=value`` for nested keys); values parse as YAML."""
    item = item[2:] if item.startswith("--") else item
    if "=" not in item:
        raise ConfigError(item, "override must look like --key=value")
    key, text = item.split("=", 1)
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        value = text
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot set a sub-key of a scalar")
    node[parts[-1]] = value


# -- shared helpers ----------------------------------------------------------------

def load_splits(cfg: ExperimentConfig):
    tr = load_dataset(cfg.dataset, cfg.data_dir, "train")
    te = load_dataset(cfg.dataset, cfg.data_dir, "test")
    if cfg.train_subset:
        tr = tr.subset(min(cfg.train_subset, len(tr)))
    if cfg.test_subset:
        te = te.subset(min(cfg.test_subset, len(te)))
    return tr, te


def _report_row(rep: EvalReport):
    return {"natural_accuracy": round(rep.natural_accuracy, 4),
            "adversarial_accuracy": round(rep.adversarial_accuracy, 4),
            "natural_correct": rep.natural_correct, "adversarial_correct": rep.adversarial_correct,
            "total": rep.total, "average_loss": round(rep.average_loss, 6),
            "nonzero_weights": int(sum(rep.nonzeros.values())), "weights": int(sum(rep.sizes.values()))}


class _Selector:
    """Per-epoch callback keeping the lowest-average-loss model (or the last)."""

    def __init__(self, cfg: ExperimentConfig, test: Dataset):
        self.cfg, self.test = cfg, test
        self.best, self.best_report, self.best_epoch = None, None, None

    def __call__(self, epoch, model, stats):
        if self.cfg.selection != "best":
            return
        rep = evaluate(model, self.test, self.cfg.attack("eval"), self.cfg.eval_seed)
        if self.best_report is None or rep.average_loss < self.best_report.average_loss:
            self.best, self.best_report, self.best_epoch = model.copy(), rep, epoch

    def finish(self, model):
        if self.cfg.selection == "best" and self.best is not None:
            return self.best, self.best_report, self.best_epoch
        return model, evaluate(model, self.test, self.cfg.attack("eval"), self.cfg.eval_seed), None


def train_from_scratch(cfg, w, seed, train_ds, test_ds, adversarial=True, init=None, optimizer=None,
                       epochs=None):
    """Fresh init, (adversarial) training, selection.  Returns (init_model, model, report, epoch)."""
    spec = build_network(cfg.family, w)
    model = init_params(spec, init or cfg.init, make_rng(seed, "init", w))
    initial = model.copy()
    tcfg = cfg.train_config(seed, epochs, adversarial, optimizer)
    sel = _Selector(cfg, test_ds)
    train(model, train_ds, tcfg, cfg.attack("train") if adversarial else None, callback=sel)
    model, rep, ep = sel.finish(model)
    return initial, model, rep, ep


def _cache_key(cfg: ExperimentConfig, w, seed):
    keys = ("dataset", "train_subset", "family", "init", "optimizer", "lr", "lr_milestones", "lr_factor",
            "batch_size", "epsilon_warmup", "train_attack", "selection")
    d = {k: getattr(cfg, k) for k in keys}
    d.update(w=w, seed=seed, epochs=cfg.pretrain_epochs if cfg.pretrain_epochs is not None else cfg.epochs)
    if cfg.selection == "best":
        d.update(test_subset=cfg.test_subset, eval_attack=cfg.eval_attack, eval_seed=cfg.eval_seed)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def robust_dense(cfg: ExperimentConfig, w, seed, train_ds, test_ds):
    """Adversarially trained dense model of width ``w`` plus its saved
    initialization, loaded from the output cache when an identical run exists."""
    cache = Path(cfg.output_dir) / "cache"
    key = _cache_key(cfg, w, seed)
    dense_path, init_path = cache / f"dense-{key}.ckpt", cache / f"init-{key}.ckpt"
    if cfg.use_cache and dense_path.exists() and init_path.exists():
        log.info("reusing cached dense model %s", dense_path)
        return load_checkpoint(init_path).model, load_checkpoint(dense_path).model
    epochs = cfg.pretrain_epochs if cfg.pretrain_epochs is not None else cfg.epochs
    initial, model, rep, ep = train_from_scratch(cfg, w, seed, train_ds, test_ds, epochs=epochs)
    cache.mkdir(parents=True, exist_ok=True)
    meta = {"kind": "dense", "width": w, "seed": seed, "cache_key": key, "selected_epoch": ep}
    save_checkpoint(Checkpoint(initial, None, {**meta, "kind": "init"}), init_path)
    save_checkpoint(Checkpoint(model, None, {**meta, "report": _report_row(rep)}), dense_path)
    return initial, model


def _ratio(cfg, src, tgt):
    return cfg.keep_ratio if cfg.keep_ratio is not None else tgt / src


def concurrent_prune(cfg, dense: Model, scheme, ratio, seed, train_ds, test_ds):
    constraint = SparsityConstraint.from_keep_ratio(dense.spec, scheme, ratio)
    sel = _Selector(cfg, test_ds)
    ckpt, state = concurrent_train_prune(
        dense, constraint, cfg.admm_config(), cfg.train_config(seed, warmup=False), cfg.attack("train"),
        train_ds, on_retrain_epoch=sel)
    model, rep, ep = sel.finish(ckpt.model)
    ckpt = Checkpoint(model, ckpt.masks, {**ckpt.metadata, "selected_epoch": ep})
    return ckpt, rep, state


# -- drivers -----------------------------------------------------------------------

def run_scratch_baseline(cfg: ExperimentConfig):
    train_ds, test_ds = load_splits(cfg)
    rows = []
    for w in cfg.widths:
        for seed in cfg.seeds:
            modes = (["natural"] if cfg.natural_baseline else []) + ["adversarial"]
            for mode in modes:
                _, _, rep, ep = train_from_scratch(cfg, w, seed, train_ds, test_ds, adversarial=mode != "natural")
                rows.append({"width": w, "seed": seed, "training": mode, "selected_epoch": ep, **_report_row(rep)})
                log.info("scratch w=%d seed=%d %s: %s", w, seed, mode, rep)
    return finish(cfg, rows)


def run_prune_grid(cfg: ExperimentConfig):
    if not cfg.pairs:
        raise ConfigError("pairs", "prune grid needs at least one [source, target] pair")
    train_ds, test_ds = load_splits(cfg)
    rows = []
    for src, tgt in cfg.pairs:
        for seed in cfg.seeds:
            _, dense = robust_dense(cfg, src, seed, train_ds, test_ds)
            for scheme in cfg.schemes:
                ratio = _ratio(cfg, src, tgt)
                ckpt, rep, state = concurrent_prune(cfg, dense, scheme, ratio, seed, train_ds, test_ds)
                _save_cell(cfg, f"prune-{scheme}-{src}to{tgt}-s{seed}", ckpt)
                rows.append({"source_width": src, "target_width": tgt, "scheme": scheme, "keep_ratio": ratio,
                             "seed": seed, "final_max_residual": state.log[-1]["max_residual"] if state.log else 0.0,
                             **_report_row(rep)})
                log.info("prune %d->%d %s seed=%d: %s", src, tgt, scheme, seed, rep)
    return finish(cfg, rows)


def _save_cell(cfg, name, ckpt):
    d = Path(cfg.output_dir) / cfg.experiment / "checkpoints"
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, d / f"{name}.ckpt")


def shrink_to_survivors(large: Model, masks: dict, target_spec) -> Model:
    """Dense small model made of the surviving filters of ``large``.

    Works for the plain feed-forward families under the filter scheme: each
    layer keeps the rows its mask keeps and the input columns fed by the
    previous layer's survivors.
    """
    if any(l.kind == "residual_block" for l in large.spec.layers):
        raise ValueError("shrunken extraction needs a feed-forward family; use the masked variant")
    p = large.params
    out = {}
    keep_in = np.arange(large.spec.input_shape[0])
    channels = len(keep_in)
    for l in large.spec.layers:
        if l.kind == "conv2d":
            w = p[f"{l.name}.weight"]
            rows = np.nonzero(masks[f"{l.name}.weight"].reshape(w.shape[0], -1).any(axis=1))[0]
            out[f"{l.name}.weight"] = w[rows][:, keep_in]
            if l.bias:
                out[f"{l.name}.bias"] = p[f"{l.name}.bias"][rows]
            keep_in, channels = rows, l.out_channels
        elif l.kind == "batchnorm":
            for suffix in ("gamma", "beta", "running_mean", "running_var"):
                out[f"{l.name}.{suffix}"] = p[f"{l.name}.{suffix}"][keep_in]
        elif l.kind == "flatten":
            nxt = large.spec.layers[large.spec.layers.index(l) + 1]
            per_channel = nxt.in_features // channels
            keep_in = (keep_in[:, None] * per_channel + np.arange(per_channel)).ravel()
        elif l.kind == "fc":
            w = p[f"{l.name}.weight"]
            rows = np.nonzero(masks[f"{l.name}.weight"].any(axis=1))[0]
            out[f"{l.name}.weight"] = w[rows][:, keep_in]
            if l.bias:
                out[f"{l.name}.bias"] = p[f"{l.name}.bias"][rows]
            keep_in = rows
    want = {n: s for n, s, _ in param_layout(target_spec)}
    for n, s in want.items():
        if n not in out or out[n].shape != s:
            got = None if n not in out else out[n].shape
            raise ValueError(f"surviving units of {n} have shape {got}, target network expects {s}")
    return Model(target_spec, {n: np.array(out[n]) for n in want})


def run_lottery_ticket(cfg: ExperimentConfig):
    """Train the winning-ticket subnetwork from the large model's saved
    initialization, in isolation and without further pruning."""
    if not cfg.pairs:
        raise ConfigError("pairs", "lottery run needs at least one [source, target] pair")
    train_ds, test_ds = load_splits(cfg)
    rows = []
    for src, tgt in cfg.pairs:
        for seed in cfg.seeds:
            init_large, dense = robust_dense(cfg, src, seed, train_ds, test_ds)
            scheme = cfg.schemes[0]
            ratio = _ratio(cfg, src, tgt)
            ckpt, prune_rep, _ = concurrent_prune(cfg, dense, scheme, ratio, seed, train_ds, test_ds)
            rows.append(lottery_cell(cfg, init_large, ckpt.masks, src, tgt, scheme, seed, train_ds, test_ds,
                                     prune_rep))
    return finish(cfg, rows)


def lottery_cell(cfg, init_large: Model | None, masks, src, tgt, scheme, seed, train_ds, test_ds,
                 prune_rep=None):
    if init_large is None:
        raise ValueError("lottery ticket run needs the saved initialization of the large model")
    tcfg = cfg.train_config(seed)
    sel = _Selector(cfg, test_ds)
    if cfg.lottery_masked or scheme != "filter":
        model = masked_retrain(init_large, masks, train_ds, tcfg, cfg.attack("train"), callback=sel)
        variant = "masked"
    else:
        model = shrink_to_survivors(init_large, masks, build_network(cfg.family, tgt))
        train(model, train_ds, tcfg, cfg.attack("train"), callback=sel)
        variant = "shrunken"
    model, rep, ep = sel.finish(model)
    row = {"source_width": src, "target_width": tgt, "scheme": scheme, "seed": seed, "variant": variant,
           "selected_epoch": ep, **_report_row(rep)}
    if prune_rep is not None:
        row["concurrent_natural_accuracy"] = round(prune_rep.natural_accuracy, 4)
        row["concurrent_adversarial_accuracy"] = round(prune_rep.adversarial_accuracy, 4)
    return row


def run_init_study(cfg: ExperimentConfig):
    train_ds, test_ds = load_splits(cfg)
    w = min(cfg.widths)
    rows = []
    for init in cfg.init_methods:
        for opt in cfg.optimizers:
            reps = []
            for seed in cfg.seeds:
                _, _, rep, _ = train_from_scratch(cfg, w, seed, train_ds, test_ds, init=init, optimizer=opt)
                reps.append(rep)
            rows.append({"init": init, "optimizer": opt, "width": w, "seeds": len(reps),
                         "natural_accuracy": round(float(np.mean([r.natural_accuracy for r in reps])), 4),
                         "adversarial_accuracy": round(float(np.mean([r.adversarial_accuracy for r in reps])), 4),
                         "per_seed": [f"{r}" for r in reps]})
            log.info("init %s / %s: %s", init, opt, rows[-1]["per_seed"])
    return finish(cfg, rows)


def run_post_prune_study(cfg: ExperimentConfig):
    if not cfg.pairs:
        raise ConfigError("pairs", "post-prune study needs at least one [source, target] pair")
    train_ds, test_ds = load_splits(cfg)
    rows = []
    eatk = cfg.attack("eval")
    for src, tgt in cfg.pairs:
        for seed in cfg.seeds:
            _, dense = robust_dense(cfg, src, seed, train_ds, test_ds)
            for scheme in cfg.schemes:
                ratio = _ratio(cfg, src, tgt)
                c = SparsityConstraint.from_keep_ratio(dense.spec, scheme, ratio)
                _, plain = post_prune(dense, c, retrain=False, evaluate_on=test_ds, eval_attack=eatk,
                                      attack=cfg.attack("train"), eval_seed=cfg.eval_seed)
                retrained, _ = post_prune(dense, c, retrain=True, cfg=cfg.train_config(seed, cfg.retrain_epochs,
                                                                                         warmup=False),
                                          attack=cfg.attack("train"), ds=train_ds)
                rt_rep = evaluate(retrained.model, test_ds, eatk, cfg.eval_seed)
                _, conc_rep, _ = concurrent_prune(cfg, dense, scheme, ratio, seed, train_ds, test_ds)
                row = {"source_width": src, "target_width": tgt, "scheme": scheme, "keep_ratio": ratio,
                       "seed": seed}
                for tag, rep in (("dense", plain["before"]), ("post", plain["pruned"]),
                                 ("post_retrain", rt_rep), ("concurrent", conc_rep)):
                    row[f"{tag}_natural_accuracy"] = round(rep.natural_accuracy, 4)
                    row[f"{tag}_adversarial_accuracy"] = round(rep.adversarial_accuracy, 4)
                rows.append(row)
                log.info("post-prune %d->%d %s: %s", src, tgt, scheme, row)
    return finish(cfg, rows)


DRIVERS = {
    "scratch": run_scratch_baseline,
    "prune_grid": run_prune_grid,
    "lottery": run_lottery_ticket,
    "init_study": run_init_study,
    "post_prune": run_post_prune_study,
}


def run_experiment(cfg: ExperimentConfig):
    return DRIVERS[cfg.experiment](cfg)


# -- outputs -------------------------------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hashes(cfg: ExperimentConfig):
    root = data_root(cfg.data_dir)
    sub = root / cfg.dataset if (root / cfg.dataset).is_dir() else root
    files = sorted(p for p in sub.glob("*") if p.is_file()) if sub.is_dir() else []
    out = {str(p.relative_to(root)): git_blob_hash(p.read_bytes()) for p in files}
    out["config"] = git_blob_hash(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    return out


def finish(cfg: ExperimentConfig, rows):
    out = Path(cfg.output_dir) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "results.csv")
    bundle = {"header": cfg.header(), "rows": rows}
    (out / "results.json").write_text(json.dumps(bundle, indent=2, sort_keys=True, default=_json_default))
    hashes = input_hashes(cfg)
    manifest = {"config": cfg.to_dict(), "seeds": cfg.seeds, "inputs": hashes,
                "content_hash": git_blob_hash(json.dumps(hashes, sort_keys=True).encode()),
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    return rows


def write_csv(rows, path):
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, cols)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
