"""IDX image/label files and seeded synthetic data."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray                 # (n, ...) float64 in [0, 1] (or raw reals for synthetic data)
    labels: np.ndarray                 # (n,) int
    n_classes: int = 10
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def targets(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes, split or self.split, dict(self.meta))

    def holdout(self, n_val: int) -> tuple["Dataset", "Dataset"]:
        """Split off the last ``n_val`` examples as validation data."""
        if not 0 < n_val < len(self):
            raise ValueError(f"cannot hold out {n_val} of {len(self)} examples")
        cut = len(self) - n_val
        return self.subset(slice(0, cut), "train"), self.subset(slice(cut, None), "val")


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file (optionally gzip-compressed)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxError(f"{path}: truncated header at offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 8 != 0x08 or (expected_magic is not None and magic != expected_magic):
        want = f"0x{expected_magic:08x}" if expected_magic is not None else "0x000008nn"
        raise IdxError(f"{path}: bad magic 0x{magic:08x} at offset 0 (expected {want})")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxError(f"{path}: truncated dimension header at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims))
    if len(raw) - header_end < count:
        raise IdxError(f"{path}: payload truncated at offset {len(raw)}, "
                       f"expected {header_end + count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)


def write_idx(path, array: np.ndarray, compress: bool | None = None):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    compress = str(path).endswith(".gz") if compress is None else compress
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist(directory, split: str = "train", limit: int | None = None) -> Dataset:
    """Images rescaled by 255 and flattened to 784 values."""
    img_name, lbl_name = SPLIT_FILES[split]
    images = read_idx(_find(directory, img_name), IMAGE_MAGIC)
    labels = read_idx(_find(directory, lbl_name), LABEL_MAGIC)
    if len(images) != len(labels):
        raise IdxError(f"image count {len(images)} does not match label count {len(labels)}")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), 10, split, {"source": os.path.abspath(directory)})


def synth_dataset(n: int, input_dim, n_classes: int, seed: int) -> Dataset:
    """Standard-normal inputs with uniformly random one-hot targets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([int(seed), 0x5EED])
    shape = (input_dim,) if np.isscalar(input_dim) else tuple(input_dim)
    x = rng.standard_normal((n,) + shape)
    labels = rng.integers(0, n_classes, size=n)
    return Dataset(x, labels, n_classes, "synthetic", {"seed": seed})


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index arrays covering ``range(n)``; shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
