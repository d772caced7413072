"""Write a stratified MNIST subset as gzipped IDX files.

Source is the 5,000-image MNIST sample bundled with mlxtend
(``pip install mlxtend``); the output is what ``src/lpa3/datasets/mnist-subset`` ships.

    python scripts/make_mnist_subset.py src/lpa3/datasets/mnist-subset
"""
import argparse
import gzip
import os
import struct

import numpy as np


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--train-per-class", type=int, default=200)
    parser.add_argument("--test-per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    from mlxtend.data import mnist_data

    X, y = mnist_data()
    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        train_idx.append(idx[: args.train_per_class])
        test_idx.append(idx[args.train_per_class : args.train_per_class + args.test_per_class])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    os.makedirs(args.out_dir, exist_ok=True)
    images = X.reshape(-1, 28, 28)
    for name, idx in (("train", train_idx), ("test", test_idx)):
        write_idx_images(os.path.join(args.out_dir, f"{name}-images-idx3-ubyte.gz"), images[idx])
        write_idx_labels(os.path.join(args.out_dir, f"{name}-labels-idx1-ubyte.gz"), y[idx])
        print(f"{name}: {len(idx)} images")


if __name__ == "__main__":
    main()
