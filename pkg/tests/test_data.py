"""Tests for dataset ingestion, splitting and batching."""
import gzip
import struct

import numpy as np
import pytest

from src.core.exceptions import ContractError, DataFormatError, DataLengthError, DataMissingError
from src.data.batching import BatchIterator, next_batch
from src.data.datasets import (
    CIFAR10_TEST_FILES,
    CIFAR10_TRAIN_FILES,
    CIFAR100_TEST_FILES,
    CIFAR100_TRAIN_FILES,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    Dataset,
    load_cifar,
    load_dataset,
    load_mnist,
    make_split,
    read_cifar_records,
    read_idx,
    subset,
    validation_size,
)
from src.utils.seeding import derive_seed, make_rng
from tests.conftest import cifar_records, write_idx, write_mnist_dir


class TestReadIdx:
    def test_reads_plain_file(self, tmp_path):
        array = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
        path = write_idx(tmp_path / "images", array)
        np.testing.assert_array_equal(read_idx(path, IDX_IMAGES_MAGIC), array)

    def test_reads_gzip_file(self, tmp_path):
        array = np.arange(5, dtype=np.uint8)
        path = write_idx(tmp_path / "labels", array, compress=True)
        assert path.suffix == ".gz"
        np.testing.assert_array_equal(read_idx(path, IDX_LABELS_MAGIC), array)

    def test_wrong_magic(self, tmp_path):
        path = write_idx(tmp_path / "labels", np.arange(5, dtype=np.uint8))
        with pytest.raises(DataFormatError, match="magic"):
            read_idx(path, IDX_IMAGES_MAGIC)

    def test_truncated_payload(self, tmp_path):
        path = write_idx(tmp_path / "images", np.zeros((2, 4, 4), dtype=np.uint8))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DataLengthError) as exc_info:
            read_idx(path, IDX_IMAGES_MAGIC)
        assert exc_info.value.expected == 32
        assert exc_info.value.actual == 29

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short"
        path.write_bytes(struct.pack(">I", IDX_IMAGES_MAGIC) + b"\x00\x00")
        with pytest.raises(DataLengthError):
            read_idx(path)

    def test_trailing_bytes(self, tmp_path):
        path = write_idx(tmp_path / "labels", np.arange(3, dtype=np.uint8))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataFormatError, match="trailing"):
            read_idx(path, IDX_LABELS_MAGIC)

    def test_corrupt_gzip(self, tmp_path):
        path = tmp_path / "labels.gz"
        path.write_bytes(b"not a gzip stream")
        with pytest.raises(DataFormatError):
            read_idx(path)

    def test_truncated_gzip_payload(self, tmp_path):
        path = tmp_path / "labels.gz"
        raw = struct.pack(">II", IDX_LABELS_MAGIC, 10) + bytes(4)
        with gzip.open(path, "wb") as f:
            f.write(raw)
        with pytest.raises(DataLengthError):
            read_idx(path, IDX_LABELS_MAGIC)


class TestLoadMnist:
    def test_loads_scaled_float_images(self, tmp_path):
        directory = write_mnist_dir(tmp_path / "mnist", train=20, test=6)
        dataset = load_mnist(directory)
        assert dataset.train_images.shape == (20, 1, 28, 28)
        assert dataset.test_images.shape == (6, 1, 28, 28)
        assert dataset.train_images.dtype == np.float32
        assert 0.0 <= dataset.train_images.min() and dataset.train_images.max() <= 1.0
        assert dataset.class_count == 10
        np.testing.assert_array_equal(dataset.train_labels, np.arange(20) % 10)

    def test_finds_nested_mnist_dir(self, tmp_path):
        write_mnist_dir(tmp_path / "root" / "mnist", compress=True)
        assert load_dataset("mnist", tmp_path / "root").name == "mnist"

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataMissingError):
            load_mnist(tmp_path / "nowhere")

    def test_missing_file(self, tmp_path):
        directory = write_mnist_dir(tmp_path / "mnist")
        (directory / "t10k-labels-idx1-ubyte").unlink()
        with pytest.raises(DataMissingError):
            load_mnist(directory)

    def test_label_count_mismatch(self, tmp_path):
        directory = write_mnist_dir(tmp_path / "mnist", train=10)
        write_idx(directory / "train-labels-idx1-ubyte", np.zeros(9, dtype=np.uint8))
        with pytest.raises(DataFormatError):
            load_mnist(directory)


class TestCifar:
    def test_cifar10_record_layout(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_records(3, variant=10))
        images, labels = read_cifar_records(path, 10)
        assert images.shape == (3, 3, 32, 32)
        np.testing.assert_array_equal(labels, [0, 1, 2])

    def test_cifar100_uses_fine_label(self, tmp_path):
        path = tmp_path / "train.bin"
        path.write_bytes(cifar_records(12, variant=100))
        _, labels = read_cifar_records(path, 100)
        np.testing.assert_array_equal(labels, np.arange(12))

    def test_partial_record(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(cifar_records(2, variant=10)[:-1])
        with pytest.raises(DataFormatError):
            read_cifar_records(path, 10)

    def test_load_cifar10(self, tmp_path):
        directory = tmp_path / "cifar-10-batches-bin"
        directory.mkdir()
        for i, name in enumerate(CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES):
            (directory / name).write_bytes(cifar_records(4, variant=10, seed=i))
        dataset = load_dataset("cifar10", tmp_path)
        assert dataset.train_size == 20
        assert dataset.test_size == 4
        assert dataset.image_shape == (3, 32, 32)

    def test_load_cifar100(self, tmp_path):
        for name in CIFAR100_TRAIN_FILES + CIFAR100_TEST_FILES:
            (tmp_path / name).write_bytes(cifar_records(5, variant=100))
        dataset = load_cifar(tmp_path, 100)
        assert dataset.class_count == 100
        assert dataset.name == "cifar100"

    def test_missing_batch(self, tmp_path):
        (tmp_path / "data_batch_1.bin").write_bytes(cifar_records(2))
        with pytest.raises(DataMissingError):
            load_cifar(tmp_path, 10)

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(ValueError):
            load_dataset("svhn", tmp_path)


class TestSplit:
    def test_validation_size_rounds_half_up(self):
        assert validation_size(60000) == 3000
        assert validation_size(50000) == 2500
        assert validation_size(10) == 1
        assert validation_size(30) == 2

    def test_partition_is_disjoint_and_complete(self, tiny_dataset):
        split = make_split(tiny_dataset, seed=3)
        assert len(split.val_indices) == 2
        combined = np.concatenate([split.train_indices, split.val_indices])
        np.testing.assert_array_equal(np.sort(combined), np.arange(tiny_dataset.train_size))

    def test_same_seed_same_split(self, tiny_dataset):
        a = make_split(tiny_dataset, seed=5)
        b = make_split(tiny_dataset, seed=5)
        np.testing.assert_array_equal(a.val_indices, b.val_indices)

    def test_training_data_views(self, tiny_data):
        assert len(tiny_data.train_images) == 38
        assert len(tiny_data.val_labels) == 2
        assert len(tiny_data.test_images) == 12

    def test_subset_is_seeded(self, tiny_dataset):
        a = subset(tiny_dataset, 10, 4, seed=1)
        b = subset(tiny_dataset, 10, 4, seed=1)
        assert a.train_size == 10 and a.test_size == 4
        np.testing.assert_array_equal(a.train_images, b.train_images)

    def test_subset_larger_than_dataset_keeps_all(self, tiny_dataset):
        assert subset(tiny_dataset, 1000, None, seed=0).train_size == tiny_dataset.train_size

    def test_dataset_rejects_out_of_range_labels(self):
        with pytest.raises(DataFormatError):
            Dataset(
                train_images=np.zeros((2, 1, 4, 4), dtype=np.float32),
                train_labels=np.array([0, 10]),
                test_images=np.zeros((1, 1, 4, 4), dtype=np.float32),
                test_labels=np.array([0]),
                name="mnist",
                class_count=10,
            )


class TestBatchIterator:
    def test_drop_last_batch_count(self):
        assert BatchIterator(np.arange(50), 8, seed=0).batches_per_epoch == 6
        assert BatchIterator(np.arange(50), 8, seed=0, drop_last=False).batches_per_epoch == 7

    def test_batch_larger_than_data(self):
        with pytest.raises(ContractError):
            BatchIterator(np.arange(5), 8, seed=0)

    def test_epoch_covers_each_index_once(self):
        iterator = BatchIterator(np.arange(32), 8, seed=4)
        batches = list(iterator.epoch_batches())
        assert len(batches) == 4
        np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(32))

    def test_orders_depend_on_seed_and_epoch(self):
        iterator = BatchIterator(np.arange(100), 10, seed=0)
        other = BatchIterator(np.arange(100), 10, seed=1)
        assert not np.array_equal(iterator.epoch_order(0), iterator.epoch_order(1))
        assert not np.array_equal(iterator.epoch_order(0), other.epoch_order(0))
        np.testing.assert_array_equal(iterator.epoch_order(2), BatchIterator(np.arange(100), 10, 0).epoch_order(2))

    def test_advances_to_next_epoch(self):
        iterator = BatchIterator(np.arange(16), 8, seed=2)
        iterator.next_indices()
        iterator.next_indices()
        third = iterator.next_indices()
        assert iterator.epoch == 1
        np.testing.assert_array_equal(third, iterator.epoch_order(1)[:8])

    def test_next_batch_selects_images(self):
        images = np.arange(10, dtype=np.float32).reshape(10, 1, 1, 1)
        iterator = BatchIterator(np.arange(10), 5, seed=0)
        batch = next_batch(iterator, images)
        np.testing.assert_array_equal(batch.reshape(-1), iterator.epoch_order(0)[:5])


class TestSeeding:
    def test_derived_seeds_are_stable_and_distinct(self):
        assert derive_seed(0, "CL", 1) == derive_seed(0, "CL", 1)
        assert derive_seed(0, "CL", 1) != derive_seed(0, "CL", 2)
        assert derive_seed(0, "CL", 1) != derive_seed(1, "CL", 1)
        assert 0 <= derive_seed(3, "x") < 2 ** 63

    def test_make_rng_streams_reproduce(self):
        a = make_rng(7, "batches", 0).random(4)
        b = make_rng(7, "batches", 0).random(4)
        np.testing.assert_array_equal(a, b)

    def test_negative_path_part_rejected(self):
        with pytest.raises(ValueError):
            derive_seed(0, -1)
