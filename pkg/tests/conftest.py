import gzip
import struct

import numpy as np
import pytest

from robustprune.data import synthetic_blobs


def write_idx_split(directory, prefix, ds):
    px = np.round(ds.images[:, 0] * 255).astype(np.uint8)
    n, h, w = px.shape
    (directory / f"{prefix}-images-idx3-ubyte.gz").write_bytes(
        gzip.compress(struct.pack(">IIII", 0x803, n, h, w) + px.tobytes(), mtime=0))
    (directory / f"{prefix}-labels-idx1-ubyte.gz").write_bytes(
        gzip.compress(struct.pack(">II", 0x801, n) + ds.labels.astype(np.uint8).tobytes(), mtime=0))


@pytest.fixture(scope="session")
def tiny_mnist_root(tmp_path_factory):
    """A well-separated MNIST-format dataset small enough for smoke runs."""
    root = tmp_path_factory.mktemp("data")
    d = root / "mnist"
    d.mkdir()
    write_idx_split(d, "train", synthetic_blobs(96, separation=2.0, seed=11))
    write_idx_split(d, "t10k", synthetic_blobs(40, separation=2.0, seed=12))
    return root


@pytest.fixture
def tiny_config(tiny_mnist_root, tmp_path):
    return {
        "data_dir": str(tiny_mnist_root),
        "output_dir": str(tmp_path / "runs"),
        "widths": [1],
        "seeds": [0],
        "epochs": 1,
        "retrain_epochs": 1,
        "batch_size": 32,
        "train_attack": {"epsilon": 0.1, "step_size": 0.05, "steps": 1},
        "eval_attack": {"epsilon": 0.1, "step_size": 0.05, "steps": 2},
        "admm": {"rho": 0.01, "iterations": 2, "batches_per_iteration": 1},
    }


# -- acceptance summary: one line per criterion ---------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        num = name.split("_")[2].rstrip("ab")  # 6a and 6b are halves of one criterion
        prev = _CRITERIA.get(num)
        ok = report.passed and (prev is None or prev[0])
        detail = "; ".join(v for k, v in report.user_properties if k == "detail")
        _CRITERIA[num] = (ok, " | ".join(filter(None, [prev[1] if prev else "", detail])))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA, key=int):
        ok, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
