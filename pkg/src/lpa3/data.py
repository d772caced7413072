"""Dataset ingestion: IDX image/label files and a synthetic bar-orientation task."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import substream

UNLABELED = -1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass
class ExampleBatch:
    """Inputs with labels (``-1`` marks unlabeled) and unique sample ids."""

    inputs: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise ValueError("inputs, labels and ids must have the same length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index) -> "ExampleBatch":
        return ExampleBatch(self.inputs[index], self.labels[index], self.ids[index])

    def unlabeled(self) -> "ExampleBatch":
        return ExampleBatch(self.inputs, np.full(len(self), UNLABELED), self.ids)


@dataclass
class Splits:
    labeled: ExampleBatch
    unlabeled: ExampleBatch
    test: ExampleBatch
    unlabeled_targets: np.ndarray = field(default=None)  # hidden true labels, for diagnostics only

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.test.inputs.shape[1:]

    @property
    def num_classes(self) -> int:
        return int(max(self.labeled.labels.max(initial=0), self.test.labels.max(initial=0))) + 1


@dataclass
class DatasetDescriptor:
    source: str = "synthetic"          # synthetic | idx | mnist-subset
    seed: int = 0
    n: int = 2000                      # size of the training pool
    n_labeled: int = 250
    n_test: int = 1000
    images: str = ""                   # idx: training-pool images/labels
    labels: str = ""
    test_images: str = ""              # idx: test images/labels (else carved from the pool file)
    test_labels: str = ""
    image_size: int = 8                # synthetic only
    noise_std: float = 0.05            # synthetic only


# --------------------------------------------------------------------- IDX


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Images as float64 in [0, 1], shape (n, 1, rows, cols)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise IDXFormatError(f"{path}: file too short for an IDX image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(raw) - 16 != n * rows * cols:
        raise IDXFormatError(f"{path}: header says {n}x{rows}x{cols} but payload has {len(raw) - 16} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
    return pixels.astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IDXFormatError(f"{path}: file too short for an IDX label header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) - 8 != n:
        raise IDXFormatError(f"{path}: header says {n} labels but payload has {len(raw) - 8} bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    if images.ndim == 4:
        images = images[:, 0]
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    n, rows, cols = pixels.shape
    payload = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    _write(path, payload)


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def _write(path, payload: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


# --------------------------------------------------------------- synthetic


def synthetic_bars(n: int, seed: int, size: int = 8, noise_std: float = 0.05):
    """Two-class bar-orientation images with a label-free background nuisance.

    Class 0 draws a horizontal bar, class 1 a vertical bar, at a random row or
    column. The background intensity is drawn independently of the class, so
    each image is ``bar(label) + background(nuisance)`` plus pixel noise.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    position = rng.integers(1, size - 1, size=n)
    background = rng.uniform(0.0, 0.4, size=n)
    images = np.repeat(background[:, None, None], size, axis=1).repeat(size, axis=2)
    for i in range(n):
        if labels[i] == 0:
            images[i, position[i], :] += 0.6
        else:
            images[i, :, position[i]] += 0.6
    images += noise_std * rng.standard_normal(images.shape)
    return np.clip(images, 0.0, 1.0)[:, None], labels


# ------------------------------------------------------------------ splits


def split_pool(inputs, labels, n_labeled: int, seed: int, test=None, n_test: int = 0, id_offset: int = 0) -> Splits:
    """Deterministically split a pool into labeled / unlabeled (and optionally test)."""
    n = len(inputs)
    if test is None:
        if n_test >= n:
            raise ValueError(f"test size {n_test} leaves no training data out of {n}")
        order = substream(seed, "split-test").permutation(n)
        test_idx, pool_idx = order[:n_test], order[n_test:]
        test = (inputs[test_idx], labels[test_idx])
        inputs, labels = inputs[pool_idx], labels[pool_idx]
        n = len(inputs)
    if n_labeled > n:
        raise ValueError(f"label budget {n_labeled} exceeds {n} available samples")
    ids = np.arange(id_offset, id_offset + n)
    order = substream(seed, "split-labeled").permutation(n)
    lab, unl = np.sort(order[:n_labeled]), np.sort(order[n_labeled:])
    test_x, test_y = test
    test_ids = np.arange(id_offset + n, id_offset + n + len(test_x))
    return Splits(
        labeled=ExampleBatch(inputs[lab], labels[lab], ids[lab]),
        unlabeled=ExampleBatch(inputs[unl], np.full(len(unl), UNLABELED), ids[unl]),
        test=ExampleBatch(test_x, test_y, test_ids),
        unlabeled_targets=labels[unl],
    )


def load_dataset(desc: DatasetDescriptor) -> Splits:
    """Labeled, unlabeled and test splits with pixels in [0, 1]; disjoint ids."""
    if desc.source == "synthetic":
        x, y = synthetic_bars(desc.n + desc.n_test, desc.seed, desc.image_size, desc.noise_std)
        return split_pool(x, y, desc.n_labeled, desc.seed, n_test=desc.n_test)
    if desc.source == "idx":
        if not desc.images or not desc.labels:
            raise ValueError("idx source needs 'images' and 'labels' paths")
        x, y = read_idx_images(desc.images), read_idx_labels(desc.labels)
        if len(x) != len(y):
            raise IDXFormatError(f"{len(x)} images but {len(y)} labels")
        if desc.test_images:
            tx, ty = read_idx_images(desc.test_images), read_idx_labels(desc.test_labels)
            if len(tx) != len(ty):
                raise IDXFormatError(f"{len(tx)} test images but {len(ty)} test labels")
            if desc.n_test:
                tx, ty = tx[: desc.n_test], ty[: desc.n_test]
            x, y = x[: desc.n], y[: desc.n]
            if len(x) < desc.n:
                raise ValueError(f"requested {desc.n} samples but {desc.images} holds {len(x)}")
            return split_pool(x, y, desc.n_labeled, desc.seed, test=(tx, ty))
        x, y = x[: desc.n + desc.n_test], y[: desc.n + desc.n_test]
        return split_pool(x, y, desc.n_labeled, desc.seed, n_test=desc.n_test)
    if desc.source == "mnist-subset":
        return load_dataset(mnist_subset_descriptor(seed=desc.seed, n=desc.n, n_labeled=desc.n_labeled,
                                                    n_test=desc.n_test))
    raise ValueError(f"unknown dataset source {desc.source!r}")


def mnist_subset_descriptor(root=None, seed: int = 0, n: int = 2000, n_labeled: int = 250,
                            n_test: int = 1000) -> DatasetDescriptor:
    """Descriptor for the MNIST subset shipped with the package."""
    root = Path(root) if root else Path(__file__).resolve().parent / "datasets" / "mnist-subset"
    return DatasetDescriptor(
        source="idx", seed=seed, n=n, n_labeled=n_labeled, n_test=n_test,
        images=str(root / "train-images-idx3-ubyte.gz"), labels=str(root / "train-labels-idx1-ubyte.gz"),
        test_images=str(root / "test-images-idx3-ubyte.gz"), test_labels=str(root / "test-labels-idx1-ubyte.gz"),
    )
