"""Dataset loading (IDX, CIFAR-10 binary), synthetic blobs and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from robustprune.numerics import make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
DATA_DIR_ENV = "ROBUSTPRUNE_DATA_DIR"


class DataFormatError(ValueError):
    def __init__(self, message, offset=None, path=None):
        where = f" (at byte offset {offset})" if offset is not None else ""
        src = f"{path}: " if path else ""
        super().__init__(f"{src}{message}{where}")
        self.offset = offset
        self.path = path


@dataclass(frozen=True)
class Dataset:
    """Images ``[n, c, h, w]`` in [0, 1] with integer labels in [0, 10)."""

    images: np.ndarray
    labels: np.ndarray
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, n=None, indices=None, split=None):
        idx = np.arange(n) if indices is None else np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], split or self.split)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 64
    shuffle_seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_idx(path, magic, ndim):
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataFormatError("file too short for IDX magic", 0, path)
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise DataFormatError(f"bad IDX magic 0x{got:08x}, expected 0x{magic:08x}", 0, path)
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise DataFormatError("truncated IDX dimension header", len(raw), path)
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims))
    if len(raw) - hdr < count:
        raise DataFormatError(f"payload truncated: need {count} bytes, have {len(raw) - hdr}",
                              len(raw), path)
    if len(raw) - hdr > count:
        raise DataFormatError(f"{len(raw) - hdr - count} unexpected trailing bytes", hdr + count, path)
    return np.frombuffer(raw, np.uint8, count, hdr).reshape(dims)


def load_idx(images_path, labels_path, split="") -> Dataset:
    """Load an IDX image/label pair (plain or gzip-compressed)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataFormatError(f"image count {len(images)} != label count {len(labels)}", 4, labels_path)
    if labels.size and labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise DataFormatError(f"label {labels[bad]} out of range", 8 + bad, labels_path)
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), split)


def load_cifar10_bin(paths, split="") -> Dataset:
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"length {len(raw)} is not a multiple of {CIFAR_RECORD}",
                                  len(raw) - len(raw) % CIFAR_RECORD, path)
        rec = np.frombuffer(raw, np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.nonzero(rec[:, 0] >= 10)[0]
        if bad.size:
            raise DataFormatError(f"label {rec[bad[0], 0]} out of range", int(bad[0]) * CIFAR_RECORD, path)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    x = np.concatenate(xs).astype(np.float64) / 255.0
    return Dataset(x, np.concatenate(ys), split)


def synthetic_blobs(n, classes=10, image_shape=(1, 28, 28), separation=1.0, noise=0.15, seed=0,
                    split="") -> Dataset:
    """Class-conditional Gaussian blobs around random prototype images.

    Each class has a prototype ``0.5 + separation * (p - 0.5)`` with ``p``
    uniform in [0, 1]; samples add isotropic noise and are clamped to [0, 1].
    ``separation=0`` makes every class share one prototype.
    """
    if n < classes:
        raise ValueError(f"need at least one sample per class (n={n}, classes={classes})")
    rng = make_rng(seed, "synthetic_blobs")
    protos = 0.5 + separation * (rng.random((classes, *image_shape)) - 0.5)
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    x = protos[labels] + noise * rng.standard_normal((n, *image_shape))
    return Dataset(np.clip(x, 0.0, 1.0), labels.astype(np.int64), split)


def batches(ds: Dataset, plan: BatchPlan, epoch: int):
    """Shuffled ``(x, y)`` batches; the order depends only on (seed, epoch)."""
    n = len(ds)
    order = make_rng(plan.shuffle_seed, "shuffle", epoch).permutation(n)
    out = []
    for start in range(0, n, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        if plan.drop_last and len(idx) < plan.batch_size and start > 0:
            break
        out.append((ds.images[idx], ds.labels[idx]))
    return out


def data_root(explicit=None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data"


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory: Path, stem: str) -> Path:
    for cand in (directory / stem, directory / f"{stem}.gz"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_mnist(root=None, split="train") -> Dataset:
    """MNIST-style IDX files from ``<root>/mnist`` (or ``root`` itself)."""
    base = data_root(root)
    directory = base / "mnist" if (base / "mnist").is_dir() else base
    img, lab = _MNIST_FILES[split]
    return load_idx(_find(directory, img), _find(directory, lab), split)


def load_cifar10(root=None, split="train") -> Dataset:
    base = data_root(root)
    for sub in ("cifar-10-batches-bin", "cifar10", ""):
        d = base / sub if sub else base
        if (d / "test_batch.bin").exists():
            break
    else:
        raise FileNotFoundError(f"no CIFAR-10 binary batches under {base}")
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    return load_cifar10_bin([d / n for n in names], split)


def load_dataset(name, root=None, split="train") -> Dataset:
    if name == "mnist":
        return load_mnist(root, split)
    if name == "cifar":
        return load_cifar10(root, split)
    raise ValueError(f"unknown dataset {name!r}")
