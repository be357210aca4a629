"""``robustprune`` command line.

    robustprune {train|prune|attack|eval|transfer|histogram} --config cfg.yaml [--key=value ...]
    robustprune experiment <name> --config cfg.yaml [--key=value ...]

Success prints a JSON summary on stdout and exits 0.  Failure prints one JSON
error record on stderr, ``{"error": {"kind", "message", "field"?}}``, and
exits 2 for configuration errors, 3 for unreadable inputs and 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from robustprune.data import DataFormatError
from robustprune.evaluation import adversarial_examples, evaluate, transfer_eval, weight_histogram, write_histogram_csv
from robustprune.experiments import (
    EXPERIMENTS, ConfigError, ExperimentConfig, _json_default, concurrent_prune, load_splits, train_from_scratch,
    write_csv,
)
from robustprune.nn import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from robustprune.sparsity import SparsityConstraint, post_prune

COMMANDS = ("train", "prune", "attack", "eval", "transfer", "histogram", "experiment")
EXIT_RUNTIME, EXIT_CONFIG, EXIT_INPUT = 1, 2, 3


def _out(cfg, command, default_name):
    path = Path(cfg.out) if cfg.out else Path(cfg.output_dir) / command / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _need(cfg, name):
    if not getattr(cfg, name):
        raise ConfigError(name, "required for this command")
    return getattr(cfg, name)


def cmd_train(cfg):
    train_ds, test_ds = load_splits(cfg)
    w = cfg.width or cfg.widths[0]
    _, model, rep, ep = train_from_scratch(cfg, w, cfg.seed, train_ds, test_ds, adversarial=cfg.adversarial)
    path = _out(cfg, "train", f"{cfg.family}-w{w}-s{cfg.seed}.ckpt")
    save_checkpoint(Checkpoint(model, None, {"kind": "train", "width": w, "seed": cfg.seed,
                                             "adversarial": cfg.adversarial, "selected_epoch": ep}), path)
    return {"checkpoint": str(path), "report": rep.to_dict()}


def cmd_prune(cfg):
    src = load_checkpoint(_need(cfg, "checkpoint"))
    ratio = _need(cfg, "keep_ratio")
    scheme = cfg.schemes[0]
    train_ds, test_ds = load_splits(cfg)
    if cfg.concurrent:
        ckpt, rep, _ = concurrent_prune(cfg, src.model, scheme, ratio, cfg.seed, train_ds, test_ds)
    else:
        c = SparsityConstraint.from_keep_ratio(src.spec, scheme, ratio)
        ckpt, _ = post_prune(src.model, c, cfg.post_prune_retrain,
                             cfg.train_config(cfg.seed, cfg.retrain_epochs, warmup=False), cfg.attack("train"),
                             train_ds)
        rep = evaluate(ckpt.model, test_ds, cfg.attack("eval"), cfg.eval_seed)
    path = _out(cfg, "prune", f"{scheme}-{ratio:g}.ckpt")
    save_checkpoint(ckpt, path)
    return {"checkpoint": str(path), "report": rep.to_dict()}


def cmd_attack(cfg):
    model = load_checkpoint(_need(cfg, "checkpoint")).model
    _, test_ds = load_splits(cfg)
    x_adv = adversarial_examples(model, test_ds, cfg.attack("eval"), cfg.eval_seed)
    path = _out(cfg, "attack", "adversarial.npz")
    np.savez_compressed(path, x_adv=x_adv, labels=test_ds.labels)
    rep = evaluate(model, test_ds, cfg.attack("eval"), x_adv=x_adv)
    return {"examples": str(path), "report": rep.to_dict()}


def cmd_eval(cfg):
    model = load_checkpoint(_need(cfg, "checkpoint")).model
    _, test_ds = load_splits(cfg)
    rep = evaluate(model, test_ds, cfg.attack("eval"), cfg.eval_seed)
    path = _out(cfg, "eval", "report.json")
    path.write_text(json.dumps(rep.to_dict(), indent=2, default=_json_default))
    return {"report_path": str(path), "report": rep.to_dict()}


def cmd_transfer(cfg):
    sources = {p: load_checkpoint(p).model for p in _need(cfg, "sources")}
    targets = {p: load_checkpoint(p).model for p in (cfg.targets or cfg.sources)}
    _, test_ds = load_splits(cfg)
    tm = transfer_eval(sources, targets, test_ds, cfg.attack("eval"), cfg.eval_seed)
    path = _out(cfg, "transfer", "transfer.csv")
    rows = [{"source": s, **{t: float(tm.accuracy[i, j]) for j, t in enumerate(tm.targets)}}
            for i, s in enumerate(tm.sources)]
    write_csv(rows, path)
    result = {"sources": tm.sources, "targets": tm.targets, "accuracy": tm.accuracy.tolist(),
              "self_attack_is_minimum": tm.self_attack_is_minimum()}
    path.with_suffix(".json").write_text(json.dumps(result, indent=2))
    return {"csv": str(path), **result}


def cmd_histogram(cfg):
    model = load_checkpoint(_need(cfg, "checkpoint")).model
    hist = weight_histogram(model, cfg.bins)
    path = _out(cfg, "histogram", "histogram.csv")
    write_histogram_csv(hist, path)
    return {"csv": str(path), "zero_fraction": hist["global"]["zero_fraction"],
            "layers": {n: h["zero_fraction"] for n, h in hist["layers"].items()}}


def cmd_experiment(cfg):
    from robustprune.experiments import run_experiment
    rows = run_experiment(cfg)
    return {"experiment": cfg.experiment, "output": str(Path(cfg.output_dir) / cfg.experiment), "rows": rows}


HANDLERS = {"train": cmd_train, "prune": cmd_prune, "attack": cmd_attack, "eval": cmd_eval,
            "transfer": cmd_transfer, "histogram": cmd_histogram, "experiment": cmd_experiment}


def build_parser():
    p = argparse.ArgumentParser(prog="robustprune", description="Concurrent adversarial training and pruning.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("name", nargs="?", help=f"experiment name for 'experiment': {', '.join(EXPERIMENTS)}")
    p.add_argument("--config", required=True, help="YAML or JSON config file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error(kind, message, field=None, code=EXIT_RUNTIME):
    rec = {"kind": kind, "message": message}
    if field is not None:
        rec["field"] = field
    print(json.dumps({"error": rec}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # --key=value pairs that argparse does not know become config overrides
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            return 0
        return _error("usage", "invalid command line; see robustprune --help", code=EXIT_CONFIG)
    bad = [e for e in extra if not (e.startswith("--") and "=" in e)]
    if bad:
        return _error("usage", f"unrecognised arguments {bad}; overrides look like --key=value", code=EXIT_CONFIG)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        overrides = list(extra)
        if args.command == "experiment":
            if not args.name:
                raise ConfigError("experiment", f"name required, one of {EXPERIMENTS}")
            overrides.append(f"--experiment={args.name}")
        elif args.name:
            raise ConfigError("name", f"'{args.command}' takes no positional name")
        cfg = ExperimentConfig.load(args.config, overrides)
        result = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        return _error("config", str(exc), exc.field, EXIT_CONFIG)
    except (FileNotFoundError, IsADirectoryError, DataFormatError, CheckpointError) as exc:
        return _error("input", str(exc), code=EXIT_INPUT)
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as a record
        return _error("runtime", f"{type(exc).__name__}: {exc}")
    print(json.dumps(result, indent=2, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
