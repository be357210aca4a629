"""Build IDX files from the MNIST digits bundled in the npm ``mnist`` package.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) ships 10,000
MNIST digits as per-class JSON arrays of pixel intensities rounded to three
decimals.  Multiplying by 255 and rounding recovers the original bytes
exactly.  The digits are shuffled with a fixed seed and split into 8,000
training and 2,000 test images written in the standard IDX layout.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python scripts/make_mnist_subset.py package/src/digits data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

N_TRAIN = 8000


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">I", magic))
        for d in array.shape:
            fh.write(struct.pack(">I", d))
        fh.write(array.astype(np.uint8).tobytes())


def main(src, dst):
    src, dst = Path(src), Path(dst)
    images, labels = [], []
    for digit in range(10):
        data = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"], dtype=np.float64)
        pix = np.rint(data * 255.0).reshape(-1, 28, 28)
        if np.abs(pix - data.reshape(-1, 28, 28) * 255.0).max() > 0.2:
            raise SystemExit(f"{digit}.json: values are not byte-quantised")
        images.append(pix)
        labels.append(np.full(len(pix), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20190801).permutation(len(labels))
    images, labels = images[order], labels[order]
    dst.mkdir(parents=True, exist_ok=True)
    write_idx(dst / "train-images-idx3-ubyte.gz", images[:N_TRAIN], 0x803)
    write_idx(dst / "train-labels-idx1-ubyte.gz", labels[:N_TRAIN], 0x801)
    write_idx(dst / "t10k-images-idx3-ubyte.gz", images[N_TRAIN:], 0x803)
    write_idx(dst / "t10k-labels-idx1-ubyte.gz", labels[N_TRAIN:], 0x801)
    print(f"wrote {N_TRAIN} train / {len(labels) - N_TRAIN} test images to {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
