import gzip
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import pytest

from src.config.settings import ExperimentConfig
from src.data.datasets import MNIST_FILES, Dataset, prepare_training_data


def write_idx(path: Path, array: np.ndarray, compress: bool = False) -> Path:
    """Write ``array`` (uint8) as an IDX file, gzip-compressed when asked."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.tobytes()
    if compress:
        path = path.with_name(path.name + ".gz")
        with gzip.open(path, "wb") as f:
            f.write(payload)
    else:
        path.write_bytes(payload)
    return path


def write_mnist_dir(directory: Path, train: int = 40, test: int = 12, seed: int = 0, compress: bool = False) -> Path:
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "train_images": rng.integers(0, 256, size=(train, 28, 28)),
        "train_labels": np.arange(train) % 10,
        "test_images": rng.integers(0, 256, size=(test, 28, 28)),
        "test_labels": np.arange(test) % 10,
    }
    for key, name in MNIST_FILES.items():
        write_idx(directory / name, arrays[key], compress=compress)
    return directory


def cifar_records(count: int, variant: int = 10, seed: int = 0) -> bytes:
    rng = np.random.default_rng(seed)
    labels = np.arange(count, dtype=np.uint8) % variant
    pixels = rng.integers(0, 256, size=(count, 3 * 32 * 32), dtype=np.uint8)
    if variant == 10:
        records = np.concatenate([labels[:, None], pixels], axis=1)
    else:
        coarse = labels // 5
        records = np.concatenate([coarse[:, None], labels[:, None], pixels], axis=1)
    return records.astype(np.uint8).tobytes()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mnist_dir(tmp_path):
    return write_mnist_dir(tmp_path / "data" / "mnist")


@pytest.fixture
def tiny_dataset():
    """A small random 1-channel 28x28 dataset with 10 classes."""
    generator = np.random.default_rng(7)
    return Dataset(
        train_images=generator.random((40, 1, 28, 28), dtype=np.float32),
        train_labels=np.arange(40) % 10,
        test_images=generator.random((12, 1, 28, 28), dtype=np.float32),
        test_labels=np.arange(12) % 10,
        name="mnist",
        class_count=10,
    )


@pytest.fixture
def tiny_data(tiny_dataset):
    return prepare_training_data(tiny_dataset, seed=0)


@pytest.fixture
def config_factory(tmp_path):
    """Desk-scale experiment configs: a small mlp-s, one epoch per task."""
    def _factory(curriculum="B1", mode="both", run_count=1, output_dir: Optional[Path] = None, **overrides):
        data = {
            "dataset": "mnist",
            "data_dir": str(tmp_path / "data"),
            "arch": "mlp-s",
            "d_proj": 8,
            "batch_size": 8,
            "lr": 1e-3,
            "epochs_per_task": 1,
            "seed": 0,
            "run_count": run_count,
            "mode": mode,
            "curriculum": curriculum,
            "precision": "float64",
            "output_dir": str(output_dir or tmp_path / "runs"),
            "probe": {"epochs": 2, "batch_size": 16},
        }
        data.update(overrides)
        return ExperimentConfig.from_dict(data)

    return _factory
