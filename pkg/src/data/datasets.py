"""
Dataset ingestion for MNIST (IDX) and CIFAR-10/100 (binary batches).

Images are returned as float32 arrays ``[N x c x h x w]`` scaled to [0, 1];
no per-channel standardization is applied.
"""
import gzip
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.exceptions import DataFormatError, DataLengthError, DataMissingError
from src.core.types import Split
from src.utils.logger import get_logger
from src.utils.seeding import make_rng

logger = get_logger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

MNIST_SUBDIR = "mnist"

CIFAR_PIXELS = 3 * 32 * 32
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)
CIFAR100_TRAIN_FILES = ("train.bin",)
CIFAR100_TEST_FILES = ("test.bin",)
CIFAR_SUBDIRS = {10: "cifar-10-batches-bin", 100: "cifar-100-binary"}

VALIDATION_FRACTION = 0.05

PathLike = Union[str, Path]


@dataclass
class Dataset:
    """Train and test images with integer labels."""
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    name: str
    class_count: int

    def __post_init__(self):
        for images, labels, part in (
            (self.train_images, self.train_labels, "train"),
            (self.test_images, self.test_labels, "test"),
        ):
            if images.ndim != 4:
                raise DataFormatError(f"{self.name} {part} images must be 4-D, got {images.shape}")
            if len(images) != len(labels):
                raise DataFormatError(
                    f"{self.name} {part}: {len(images)} images but {len(labels)} labels",
                    {"images": len(images), "labels": len(labels)},
                )
            if len(labels) and (labels.min() < 0 or labels.max() >= self.class_count):
                raise DataFormatError(f"{self.name} {part} labels outside [0, {self.class_count})")

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.train_images.shape[1:])  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.train_images.shape[1]

    @property
    def train_size(self) -> int:
        return len(self.train_images)

    @property
    def test_size(self) -> int:
        return len(self.test_images)


@dataclass
class TrainingData:
    """A dataset together with its train / validation / test split."""
    dataset: Dataset
    split: Split

    @cached_property
    def train_images(self) -> np.ndarray:
        return self.dataset.train_images[self.split.train_indices]

    @cached_property
    def train_labels(self) -> np.ndarray:
        return self.dataset.train_labels[self.split.train_indices]

    @cached_property
    def val_images(self) -> np.ndarray:
        return self.dataset.train_images[self.split.val_indices]

    @cached_property
    def val_labels(self) -> np.ndarray:
        return self.dataset.train_labels[self.split.val_indices]

    @property
    def test_images(self) -> np.ndarray:
        return self.dataset.test_images[self.split.test_indices]

    @property
    def test_labels(self) -> np.ndarray:
        return self.dataset.test_labels[self.split.test_indices]


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        try:
            with gzip.open(path, "rb") as f:
                return f.read()
        except (OSError, EOFError) as e:
            raise DataFormatError(f"Corrupt gzip file {path}: {e}", {"path": str(path)}) from e
    return path.read_bytes()


def read_idx(path: PathLike, expected_magic: Optional[int] = None) -> np.ndarray:
    """
    Parse an IDX file of unsigned bytes.

    Layout: big-endian u32 magic (0x0000 08 <ndim>), ``ndim`` big-endian u32
    sizes, then the payload.

    Raises:
        DataLengthError: If the file is shorter than its header promises
        DataFormatError: On a wrong magic number or trailing bytes
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataLengthError(f"{path.name}: file too short for an IDX header", expected=4, actual=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(
            f"{path.name}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
            {"path": str(path), "magic": magic},
        )
    if magic >> 8 != 0x08:
        raise DataFormatError(f"{path.name}: unsupported IDX element type in magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataLengthError(f"{path.name}: truncated IDX header", expected=header, actual=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims)) if dims else 0
    payload = len(raw) - header
    if payload < count:
        raise DataLengthError(f"{path.name}: truncated IDX payload", expected=count, actual=payload)
    if payload > count:
        raise DataFormatError(
            f"{path.name}: {payload - count} trailing bytes after IDX payload",
            {"expected": count, "actual": payload},
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def _locate(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise DataMissingError(f"Missing dataset file {name} in {directory}", {"directory": str(directory)})


def load_mnist(dir_path: PathLike) -> Dataset:
    """Load the four MNIST IDX files (plain or gzip) from ``dir_path`` or its ``mnist/`` subdirectory."""
    directory = Path(dir_path)
    if (directory / MNIST_SUBDIR).is_dir():
        directory = directory / MNIST_SUBDIR
    if not directory.is_dir():
        raise DataMissingError(f"MNIST directory not found: {directory}")

    arrays = {}
    for key, name in MNIST_FILES.items():
        magic = IDX_IMAGES_MAGIC if key.endswith("images") else IDX_LABELS_MAGIC
        arrays[key] = read_idx(_locate(directory, name), expected_magic=magic)

    dataset = Dataset(
        train_images=_scale(arrays["train_images"][:, None, :, :]),
        train_labels=arrays["train_labels"].astype(np.int64),
        test_images=_scale(arrays["test_images"][:, None, :, :]),
        test_labels=arrays["test_labels"].astype(np.int64),
        name="mnist",
        class_count=10,
    )
    logger.info("Loaded MNIST", train=dataset.train_size, test=dataset.test_size, directory=str(directory))
    return dataset


def read_cifar_records(path: PathLike, variant: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parse one CIFAR binary batch into ``(images uint8 [N x 3 x 32 x 32], labels)``.

    CIFAR-10 records are 1 label byte + 3072 pixels; CIFAR-100 records carry a
    coarse and a fine label byte, and the fine label is returned.

    Raises:
        DataFormatError: If the file length is not a whole number of records
    """
    path = Path(path)
    label_bytes = 1 if variant == 10 else 2
    record = label_bytes + CIFAR_PIXELS
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % record:
        raise DataFormatError(
            f"{path.name}: {raw.size} bytes is not a whole number of {record}-byte records",
            {"path": str(path), "record_size": record, "size": int(raw.size)},
        )
    records = raw.reshape(-1, record)
    labels = records[:, label_bytes - 1].astype(np.int64)
    images = records[:, label_bytes:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar(dir_path: PathLike, variant: int = 10) -> Dataset:
    """Load CIFAR-10 or CIFAR-100 binary batches from ``dir_path``."""
    if variant not in (10, 100):
        raise ValueError(f"CIFAR variant must be 10 or 100, got {variant}")
    directory = Path(dir_path)
    nested = directory / CIFAR_SUBDIRS[variant]
    if nested.is_dir():
        directory = nested
    if not directory.is_dir():
        raise DataMissingError(f"CIFAR-{variant} directory not found: {directory}")

    train_files = CIFAR10_TRAIN_FILES if variant == 10 else CIFAR100_TRAIN_FILES
    test_files = CIFAR10_TEST_FILES if variant == 10 else CIFAR100_TEST_FILES
    train_images, train_labels = _read_cifar_files(directory, train_files, variant)
    test_images, test_labels = _read_cifar_files(directory, test_files, variant)

    dataset = Dataset(
        train_images=_scale(train_images),
        train_labels=train_labels,
        test_images=_scale(test_images),
        test_labels=test_labels,
        name=f"cifar{variant}",
        class_count=variant,
    )
    logger.info(
        f"Loaded CIFAR-{variant}", train=dataset.train_size, test=dataset.test_size, directory=str(directory)
    )
    return dataset


def _read_cifar_files(directory: Path, names: Sequence[str], variant: int) -> Tuple[np.ndarray, np.ndarray]:
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for name in names:
        path = directory / name
        if not path.exists():
            raise DataMissingError(f"Missing dataset file {name} in {directory}", {"directory": str(directory)})
        batch_images, batch_labels = read_cifar_records(path, variant)
        images.append(batch_images)
        labels.append(batch_labels)
    return np.concatenate(images), np.concatenate(labels)


def _scale(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255.0)


def load_dataset(name: str, dir_path: PathLike) -> Dataset:
    """Dispatch on the dataset name used in experiment configs."""
    if name == "mnist":
        return load_mnist(dir_path)
    if name == "cifar10":
        return load_cifar(dir_path, 10)
    if name == "cifar100":
        return load_cifar(dir_path, 100)
    raise ValueError(f"Unknown dataset: {name}")


def subset(dataset: Dataset, train_count: Optional[int], test_count: Optional[int], seed: int) -> Dataset:
    """A seeded random subset, used for desk-scale runs."""
    rng = make_rng(seed, "subset")

    def pick(size: int, count: Optional[int]) -> np.ndarray:
        if count is None or count >= size:
            return np.arange(size)
        return np.sort(rng.choice(size, size=count, replace=False))

    train_idx = pick(dataset.train_size, train_count)
    test_idx = pick(dataset.test_size, test_count)
    return Dataset(
        train_images=dataset.train_images[train_idx],
        train_labels=dataset.train_labels[train_idx],
        test_images=dataset.test_images[test_idx],
        test_labels=dataset.test_labels[test_idx],
        name=dataset.name,
        class_count=dataset.class_count,
    )


def validation_size(train_size: int) -> int:
    """5% of the training set, rounded half up."""
    return int(np.floor(VALIDATION_FRACTION * train_size + 0.5))


def make_split(dataset: Dataset, seed: int) -> Split:
    """Seeded shuffle of the training indices, then a 95/5 train/validation partition."""
    permutation = make_rng(seed, "split").permutation(dataset.train_size)
    val_count = validation_size(dataset.train_size)
    return Split(
        train_indices=np.sort(permutation[val_count:]),
        val_indices=np.sort(permutation[:val_count]),
        test_indices=np.arange(dataset.test_size),
        seed=seed,
    )


def prepare_training_data(dataset: Dataset, seed: int) -> TrainingData:
    return TrainingData(dataset=dataset, split=make_split(dataset, seed))
