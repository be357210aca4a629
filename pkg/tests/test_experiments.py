import csv
import json

import numpy as np
import pytest

from robustprune.experiments import (
    ConfigError, ExperimentConfig, apply_override, lottery_cell, load_splits, robust_dense, run_experiment,
    run_init_study, shrink_to_survivors,
)
from robustprune.nn import build_network, forward
from robustprune.numerics import make_rng
from robustprune.optim import init_params
from robustprune.sparsity import SparsityConstraint, hard_prune


def cfg_of(base, **kw):
    return ExperimentConfig.from_dict({**base, **kw})


@pytest.mark.parametrize("key,value", [
    ("experiment", "bogus"), ("family", "alexnet"), ("widths", [0]), ("pairs", [[1, 2]]), ("pairs", [[2, 2]]),
    ("schemes", ["block"]), ("lr", -1), ("epochs", -1), ("keep_ratio", 1.5), ("selection", "median"),
    ("init", "lecun"), ("optimizers", ["rmsprop"]), ("seeds", "0"), ("no_such_field", 1), ("batch_size", 2.5),
])
def test_invalid_config_names_field(key, value):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({key: value})
    assert err.value.field == key
    assert key in str(err.value)


def test_nested_validation():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"train_attack": {"epsilon": -1}})
    assert err.value.field == "train_attack"
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"admm": {"gamma": 1}})
    assert err.value.field == "admm.gamma"
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"dataset": "cifar"})  # mnist_lenet cannot take cifar images
    assert err.value.field == "family"


def test_overrides_and_load(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("epochs: 4\ntrain_attack:\n  steps: 7\n")
    cfg = ExperimentConfig.load(path, ["--epochs=2", "--train_attack.step_size=0.05", "--schemes=[column]"])
    assert cfg.epochs == 2 and cfg.train_attack["steps"] == 7 and cfg.train_attack["step_size"] == 0.05
    assert cfg.schemes == ["column"] and cfg.train_attack["epsilon"] == 0.3
    raw = {}
    apply_override(raw, "--a.b=3")
    assert raw == {"a": {"b": 3}}
    with pytest.raises(ConfigError):
        apply_override(raw, "--novalue")
    (tmp_path / "bad.yaml").write_text("epochs: [\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.yaml")


def test_defaults_reflect_desk_profile():
    cfg = ExperimentConfig()
    assert cfg.attack("eval").steps == 40 and cfg.attack("eval").step_size == 0.01
    assert cfg.attack("train").steps == 10
    assert cfg.admm_config().rho == 1e-3 and cfg.admm_config().iterations == 30
    assert cfg.header()["profile"] == "desk" and "desk-scale" in cfg.header()["note"]
    assert ExperimentConfig.from_dict({"lr_milestones": [80, 150]}).optimizer_config().schedule.kind == "step_decay"


def _read(out, name):
    bundle = json.loads((out / name / "results.json").read_text())
    manifest = json.loads((out / name / "manifest.json").read_text())
    with open(out / name / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    return bundle, manifest, rows


def test_scratch_baseline_outputs(tiny_config, tmp_path):
    cfg = cfg_of(tiny_config, experiment="scratch", widths=[1, 2])
    rows = run_experiment(cfg)
    assert [(r["width"], r["training"]) for r in rows] == [
        (1, "natural"), (1, "adversarial"), (2, "natural"), (2, "adversarial")]
    bundle, manifest, csv_rows = _read(tmp_path / "runs", "scratch")
    assert bundle["header"]["profile"] == "desk" and bundle["rows"] == rows
    assert len(csv_rows) == 4 and manifest["seeds"] == [0]
    assert set(manifest["inputs"]) >= {"config", "mnist/train-images-idx3-ubyte.gz"}
    assert len(manifest["content_hash"]) == 40
    # re-running reproduces the table exactly
    assert run_experiment(cfg) == rows
    assert json.loads((tmp_path / "runs" / "scratch" / "manifest.json").read_text())["content_hash"] == \
        manifest["content_hash"]


def test_best_selection(tiny_config):
    cfg = cfg_of(tiny_config, experiment="scratch", natural_baseline=False, epochs=2, selection="best")
    (row,) = run_experiment(cfg)
    assert row["selected_epoch"] in (0, 1)


def test_prune_grid(tiny_config, tmp_path):
    cfg = cfg_of(tiny_config, experiment="prune_grid", pairs=[[2, 1]], schemes=["filter", "irregular"])
    rows = run_experiment(cfg)
    assert [(r["source_width"], r["target_width"], r["scheme"]) for r in rows] == [
        (2, 1, "filter"), (2, 1, "irregular")]
    assert all(r["keep_ratio"] == 0.5 for r in rows)
    assert len(list((tmp_path / "runs" / "cache").glob("dense-*.ckpt"))) == 1
    assert len(list((tmp_path / "runs" / "prune_grid" / "checkpoints").glob("*.ckpt"))) == 2
    for r in rows:
        assert r["nonzero_weights"] < r["weights"]


def test_dense_cache_reused(tiny_config):
    cfg = cfg_of(tiny_config)
    tr, te = load_splits(cfg)
    a_init, a = robust_dense(cfg, 2, 0, tr, te)
    b_init, b = robust_dense(cfg, 2, 0, tr, te)
    for n in a.params:
        assert a.params[n].tobytes() == b.params[n].tobytes()
        assert a_init.params[n].tobytes() == b_init.params[n].tobytes()


def test_shrink_identity_with_full_masks():
    spec = build_network("mnist_lenet", 2)
    m = init_params(spec, "kaiming_normal", make_rng(0, "init"))
    masks = {n: np.ones_like(m.params[n]) for n in ("conv1.weight", "conv2.weight", "fc1.weight", "fc2.weight")}
    small = shrink_to_survivors(m, masks, spec)
    for n in m.params:
        assert small.params[n].tobytes() == m.params[n].tobytes()


@pytest.mark.parametrize("family,src,tgt", [("mnist_lenet", 4, 1), ("cifar_lenet", 2, 1), ("cifar_vgg", 2, 1)])
def test_shrink_matches_masked_forward(family, src, tgt):
    spec = build_network(family, src)
    m = init_params(spec, "kaiming_normal", make_rng(1, "init"))
    c = SparsityConstraint.from_keep_ratio(spec, "filter", tgt / src)
    pruned, masks = hard_prune(m, c)
    # zero the biases of dropped filters so the masked model is exactly the subnetwork
    for l in spec.layers:
        if l.kind in ("conv2d", "fc") and l.bias:
            keep = masks[f"{l.name}.weight"].reshape(masks[f"{l.name}.weight"].shape[0], -1).any(axis=1)
            pruned.params[f"{l.name}.bias"] = pruned.params[f"{l.name}.bias"] * keep
    small = shrink_to_survivors(pruned, masks, build_network(family, tgt))
    x = make_rng(1, "x").random((2, *spec.input_shape))
    np.testing.assert_allclose(forward(small, x)[0], forward(pruned, x)[0], atol=1e-10)


def test_shrink_rejects_resnet_and_bad_masks():
    spec = build_network("cifar_resnet", 2)
    m = init_params(spec, "kaiming_normal", make_rng(2, "init"))
    with pytest.raises(ValueError):
        shrink_to_survivors(m, {}, build_network("cifar_resnet", 1))
    spec = build_network("mnist_lenet", 2)
    m = init_params(spec, "kaiming_normal", make_rng(2, "init"))
    _, masks = hard_prune(m, SparsityConstraint.from_keep_ratio(spec, "filter", 0.25))
    with pytest.raises(ValueError):
        shrink_to_survivors(m, masks, build_network("mnist_lenet", 1))


def test_lottery_runs_and_requires_init(tiny_config):
    cfg = cfg_of(tiny_config, experiment="lottery", pairs=[[2, 1]])
    (row,) = run_experiment(cfg)
    assert row["variant"] == "shrunken" and "concurrent_adversarial_accuracy" in row
    masked = cfg_of(tiny_config, experiment="lottery", pairs=[[2, 1]], lottery_masked=True)
    (mrow,) = run_experiment(masked)
    assert mrow["variant"] == "masked"
    assert run_experiment(cfg) == [row]  # deterministic
    with pytest.raises(ValueError):
        lottery_cell(cfg, None, {}, 2, 1, "filter", 0, None, None)


def test_init_study_grid(tiny_config):
    cfg = cfg_of(tiny_config, experiment="init_study", natural_baseline=False)
    rows = run_init_study(cfg)
    assert len(rows) == 21
    assert {(r["init"], r["optimizer"]) for r in rows} == {
        (i, o) for i in cfg.init_methods for o in ("adam", "sgd", "cosanneal")}


def test_post_prune_study(tiny_config):
    cfg = cfg_of(tiny_config, experiment="post_prune", pairs=[[2, 1]])
    (row,) = run_experiment(cfg)
    for tag in ("dense", "post", "post_retrain", "concurrent"):
        assert 0 <= row[f"{tag}_adversarial_accuracy"] <= 100


def test_drivers_require_pairs(tiny_config):
    for name in ("prune_grid", "lottery", "post_prune"):
        with pytest.raises(ConfigError) as err:
            run_experiment(cfg_of(tiny_config, experiment=name))
        assert err.value.field == "pairs"
