"""Build the 2000/500 MNIST IDX fixture from the 5k MNIST sample bundled with mlxtend.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist-subset

Train takes the first 200 images of each digit, test the next 50. Classes are
interleaved round-robin so any prefix of either file stays balanced.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.int64)

    per_class = [np.flatnonzero(labels == c) for c in range(10)]
    train_idx = [per_class[c][i] for i in range(200) for c in range(10)]
    test_idx = [per_class[c][200 + i] for i in range(50) for c in range(10)]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte", pixels[train_idx])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[train_idx])
    write_idx_images(out / "t10k-images-idx3-ubyte", pixels[test_idx])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[test_idx])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
