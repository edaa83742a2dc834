"""
Seeded mini-batch iteration.
"""
from typing import Iterator

import numpy as np

from src.core.exceptions import ContractError
from src.utils.seeding import make_rng


class BatchIterator:
    """
    Epoch-wise shuffled batches over a fixed index set.

    The order of epoch ``e`` is a pure function of ``(seed, e)``. When an
    epoch runs out, the iterator advances to the next one on its own.
    """

    def __init__(self, indices: np.ndarray, batch_size: int, seed: int, drop_last: bool = True):
        if batch_size < 1:
            raise ContractError(f"batch_size must be positive, got {batch_size}")
        self.indices = np.asarray(indices, dtype=np.int64)
        self.batch_size = batch_size
        self.seed = seed
        self.drop_last = drop_last
        if self.batches_per_epoch == 0:
            raise ContractError(
                f"batch_size {batch_size} exceeds the {len(self.indices)} available indices with drop_last"
            )
        self.epoch = 0
        self._position = 0
        self._order = self.epoch_order(0)

    @property
    def batches_per_epoch(self) -> int:
        if self.drop_last:
            return len(self.indices) // self.batch_size
        return -(-len(self.indices) // self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        """The permuted indices visited during ``epoch``."""
        return self.indices[make_rng(self.seed, "batches", epoch).permutation(len(self.indices))]

    def reset(self, epoch: int = 0) -> None:
        self.epoch = epoch
        self._position = 0
        self._order = self.epoch_order(epoch)

    def next_indices(self) -> np.ndarray:
        if self._position >= self.batches_per_epoch:
            self.reset(self.epoch + 1)
        start = self._position * self.batch_size
        self._position += 1
        return self._order[start:start + self.batch_size]

    def epoch_batches(self) -> Iterator[np.ndarray]:
        """Index batches for the remainder of the current epoch."""
        while self._position < self.batches_per_epoch:
            yield self.next_indices()


def next_batch(iterator: BatchIterator, images: np.ndarray) -> np.ndarray:
    """The next batch of ``images`` selected by ``iterator``."""
    return images[iterator.next_indices()]
