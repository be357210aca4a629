import gzip
import struct

import numpy as np
import pytest

from robustprune.data import (
    BatchPlan, DataFormatError, Dataset, batches, data_root, load_cifar10, load_cifar10_bin, load_dataset,
    load_idx, load_mnist, synthetic_blobs,
)
from robustprune.nn import LayerSpec, NetworkSpec, forward
from robustprune.numerics import make_rng
from robustprune.optim import OptimizerConfig, Schedule, init_params
from robustprune.training import TrainConfig, train


def idx_images(pixels, magic=0x803):
    n, h, w = pixels.shape
    return struct.pack(">IIII", magic, n, h, w) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels, magic=0x801):
    return struct.pack(">II", magic, len(labels)) + bytes(labels)


def write(path, raw):
    path.write_bytes(raw)
    return path


def test_idx_single_pixel(tmp_path):
    img = write(tmp_path / "i", idx_images(np.full((1, 1, 1), 255)))
    lab = write(tmp_path / "l", idx_labels([3]))
    ds = load_idx(img, lab)
    assert ds.images.shape == (1, 1, 1, 1) and ds.images.item() == 1.0
    assert ds.labels.tolist() == [3]


def test_idx_three_images_known_bytes(tmp_path):
    px = np.arange(3 * 2 * 2).reshape(3, 2, 2) * 20
    img = write(tmp_path / "i", idx_images(px))
    lab = write(tmp_path / "l", idx_labels([0, 9, 4]))
    ds = load_idx(img, lab, "test")
    assert len(ds) == 3 and ds.split == "test"
    np.testing.assert_array_equal(ds.images[:, 0], px / 255.0)
    assert ds.labels.dtype == np.int64 and ds.labels.tolist() == [0, 9, 4]


def test_idx_gzip_transparent(tmp_path):
    px = np.arange(4).reshape(1, 2, 2)
    img = write(tmp_path / "i.gz", gzip.compress(idx_images(px)))
    lab = write(tmp_path / "l.gz", gzip.compress(idx_labels([5])))
    np.testing.assert_array_equal(load_idx(img, lab).images[:, 0], px / 255.0)


@pytest.mark.parametrize("case,offset", [
    ("images_magic", 0), ("labels_magic", 0), ("truncated", 16 + 7), ("trailing", 16 + 8),
    ("count", 4), ("label_range", 8 + 1), ("short_header", 10),
])
def test_idx_corruptions(tmp_path, case, offset):
    px = np.zeros((2, 2, 2))
    img_raw, lab_raw = idx_images(px), idx_labels([1, 2])
    if case == "images_magic":
        img_raw = idx_images(px, magic=0x802)
    elif case == "labels_magic":
        lab_raw = idx_labels([1, 2], magic=0x803)
    elif case == "truncated":
        img_raw = img_raw[:-1]
    elif case == "trailing":
        img_raw = img_raw + b"\x00"
    elif case == "count":
        lab_raw = idx_labels([1, 2, 3])
    elif case == "label_range":
        lab_raw = idx_labels([1, 10])
    elif case == "short_header":
        img_raw = img_raw[:10]
    img = write(tmp_path / "i", img_raw)
    lab = write(tmp_path / "l", lab_raw)
    with pytest.raises(DataFormatError) as err:
        load_idx(img, lab)
    assert err.value.offset == offset
    assert "offset" in str(err.value)


def test_cifar_single_record(tmp_path):
    rec = bytes([7]) + bytes(range(256)) * 12
    ds = load_cifar10_bin(write(tmp_path / "b.bin", rec))
    assert len(ds) == 1 and ds.labels.tolist() == [7]
    assert ds.images.shape == (1, 3, 32, 32)
    # channel-major: byte k of the pixel block is channel k // 1024
    assert ds.images[0, 0, 0, 1] == 1 / 255 and ds.images[0, 1, 0, 0] == 0.0
    assert ds.images[0, 2, 31, 31] == 255 / 255


def test_cifar_zero_pixels_and_multiple_files(tmp_path):
    a = write(tmp_path / "a.bin", bytes([1]) + bytes(3072))
    b = write(tmp_path / "b.bin", (bytes([2]) + bytes(3072)) * 2)
    ds = load_cifar10_bin([a, b])
    assert ds.labels.tolist() == [1, 2, 2] and not ds.images.any()


@pytest.mark.parametrize("raw,offset", [(bytes(3072), 0), (bytes(3073 + 5), 3073), (b"", 0),
                                        (bytes(3073) + bytes([10]) + bytes(3072), 3073)])
def test_cifar_corruptions(tmp_path, raw, offset):
    with pytest.raises(DataFormatError) as err:
        load_cifar10_bin(write(tmp_path / "bad.bin", raw))
    assert err.value.offset == offset


def test_dataset_root_resolution(tmp_path, monkeypatch):
    d = tmp_path / "mnist"
    d.mkdir()
    write(d / "t10k-images-idx3-ubyte", idx_images(np.zeros((2, 28, 28))))
    write(d / "t10k-labels-idx1-ubyte.gz", gzip.compress(idx_labels([1, 2])))
    monkeypatch.setenv("ROBUSTPRUNE_DATA_DIR", str(tmp_path))
    assert data_root() == tmp_path
    assert len(load_mnist(split="test")) == 2
    assert len(load_dataset("mnist", split="test")) == 2
    assert data_root(tmp_path / "x") == tmp_path / "x"
    with pytest.raises(FileNotFoundError):
        load_mnist(split="train")
    with pytest.raises(FileNotFoundError):
        load_cifar10()
    with pytest.raises(ValueError):
        load_dataset("svhn")


def test_bundled_mnist_subset():
    tr, te = load_mnist(split="train"), load_mnist(split="test")
    assert len(tr) == 8000 and len(te) == 2000
    assert tr.input_shape == (1, 28, 28)
    assert set(np.unique(te.labels)) == set(range(10))
    assert tr.images.min() == 0.0 and tr.images.max() == 1.0


def test_batches_partition():
    ds = synthetic_blobs(50, image_shape=(1, 2, 2))
    for bs in (1, 7, 50, 64):
        out = batches(ds, BatchPlan(bs, shuffle_seed=3), epoch=2)
        assert len(out) == -(-50 // bs)
        seen = np.concatenate([y for _, y in out])
        assert sorted(seen.tolist()) == sorted(ds.labels.tolist())
        xs = np.concatenate([x for x, _ in out])
        assert sorted(map(bytes, xs.reshape(50, -1))) == sorted(map(bytes, ds.images.reshape(50, -1)))
    assert len(batches(ds, BatchPlan(64), 0)) == 1


def test_batches_order_depends_on_seed_and_epoch():
    ds = synthetic_blobs(40, image_shape=(1, 1, 1))
    first = lambda seed, ep: batches(ds, BatchPlan(40, seed), ep)[0][1].tolist()  # noqa: E731
    assert first(0, 0) == first(0, 0)
    assert first(0, 0) != first(0, 1)
    assert first(0, 0) != first(1, 0)


def test_synthetic_blobs_properties():
    a = synthetic_blobs(30, seed=4)
    b = synthetic_blobs(30, seed=4)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert np.bincount(a.labels).tolist() == [3] * 10
    with pytest.raises(ValueError):
        synthetic_blobs(5)


def _tiny_fc(shape):
    d = int(np.prod(shape))
    return NetworkSpec("tiny_fc", 1, shape, (LayerSpec("flatten"),
                                              LayerSpec("fc", "fc", in_features=d, out_features=10)))


@pytest.mark.parametrize("separation,lo,hi", [(3.0, 0.95, 1.0), (0.0, 0.0, 0.3)])
def test_blobs_learnability(separation, lo, hi):
    shape = (1, 4, 4)
    tr = synthetic_blobs(500, image_shape=shape, separation=separation, seed=1)
    te = synthetic_blobs(1000, image_shape=shape, separation=separation, seed=1).subset(indices=range(500, 1000))
    model = init_params(_tiny_fc(shape), "xavier_uniform", make_rng(0, "init"))
    cfg = TrainConfig(epochs=30, batch_size=50, adversarial=False,
                      optimizer=OptimizerConfig("adam", Schedule("constant", 1e-2)))
    train(model, tr, cfg)
    acc = float(np.mean(forward(model, te.images)[0].argmax(1) == te.labels))
    assert lo <= acc <= hi


def test_dataset_length_check():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 1, 1)), np.zeros(3, dtype=int))
