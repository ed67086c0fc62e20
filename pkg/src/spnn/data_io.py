"""MNIST IDX parsing and the contiguous train/validation/test split."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MAX_ELEMENTS = 1 << 31
DATA_DIR_ENV = "SPNN_DATA_DIR"

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

DEFAULT_SPLIT = (40000, 10000, 10000)


class IdxFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _parse_idx(buf: bytes, magic: int, ndim: int) -> np.ndarray:
    buf = memoryview(buf)
    header = 4 + 4 * ndim
    if len(buf) < 4:
        raise IdxFormatError("truncated magic number", len(buf))
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise IdxFormatError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    if len(buf) < header:
        raise IdxFormatError("truncated dimension header", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    size = 1
    for d in dims:
        size *= d
    if size > MAX_ELEMENTS:
        raise IdxFormatError(f"dimensions {dims} overflow the element limit", 4)
    if len(buf) - header < size:
        raise IdxFormatError(f"payload truncated: need {size} bytes, have {len(buf) - header}", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=size, offset=header)
    return data.reshape(dims[0], -1) if ndim > 1 else data


def parse_idx_images(buf: bytes) -> np.ndarray:
    """count x (rows*cols) uint8 matrix."""
    images = _parse_idx(buf, IMAGES_MAGIC, 3)
    return images.reshape(images.shape[0], -1)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    labels = _parse_idx(buf, LABELS_MAGIC, 1)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IdxFormatError(f"label {labels[bad]} out of range", 8 + bad)
    return labels


def resolve_data_dir(data_dir=None) -> Path:
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise FileNotFoundError(f"no data directory given (use --data-dir or ${DATA_DIR_ENV})")
    path = Path(data_dir)
    if not path.is_dir():
        raise FileNotFoundError(f"data directory {path} does not exist")
    return path


def read_maybe_gz(directory: Path, name: str) -> bytes:
    for candidate, opener in ((directory / name, open), (directory / f"{name}.gz", gzip.open)):
        if candidate.exists():
            with opener(candidate, "rb") as fh:
                return fh.read()
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def load_mnist(data_dir=None, official_test=True):
    """Returns ``(train_images, train_labels, test_images, test_labels)``;
    the last two are None when ``official_test`` is False or absent."""
    path = resolve_data_dir(data_dir)
    images = parse_idx_images(read_maybe_gz(path, TRAIN_IMAGES))
    labels = parse_idx_labels(read_maybe_gz(path, TRAIN_LABELS))
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} training images but {len(labels)} labels")
    t_images = t_labels = None
    if official_test:
        try:
            t_images = parse_idx_images(read_maybe_gz(path, TEST_IMAGES))
            t_labels = parse_idx_labels(read_maybe_gz(path, TEST_LABELS))
        except FileNotFoundError:
            t_images = t_labels = None
        if t_images is not None and len(t_images) != len(t_labels):
            raise ValueError(f"{len(t_images)} test images but {len(t_labels)} labels")
    return images, labels, t_images, t_labels


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class Split:
    train: Dataset
    validation: Dataset
    test: Dataset


def scale_pixels(images) -> np.ndarray:
    return np.asarray(images, dtype=np.float32) / np.float32(255.0)


def to_dataset(images, labels) -> Dataset:
    return Dataset(scale_pixels(images), np.asarray(labels, dtype=np.int64))


def make_split(images, labels, sizes=DEFAULT_SPLIT) -> Split:
    """Contiguous split, in file order, into train/validation/test.

    Images beyond ``sum(sizes)`` are ignored, which allows reduced runs.
    """
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    n_train, n_val, n_test = sizes
    if min(sizes) < 0 or sum(sizes) > len(images):
        raise ValueError(f"split {tuple(sizes)} needs {sum(sizes)} images, have {len(images)}")
    cuts = np.cumsum([0, n_train, n_val, n_test])
    parts = [to_dataset(images[a:b], labels[a:b]) for a, b in zip(cuts[:-1], cuts[1:])]
    return Split(*parts)
