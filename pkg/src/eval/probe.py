"""
Linear-probe evaluation of frozen encoders.

Backbone features are extracted once per split (and optionally cached on
disk), then a single linear layer is fit with softmax cross-entropy and
Adam. The encoder is never touched.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.config.settings import ProbeConfig
from src.core.exceptions import ContractError, DimensionError
from src.data.batching import BatchIterator
from src.data.datasets import TrainingData
from src.model.encoder import FrozenEncoder, ProbeHead, parameter_checksum
from src.numeric.optim import Adam
from src.numeric.tensor import Tape, Tensor, backward, softmax_cross_entropy
from src.utils.io import atomic_save_array
from src.utils.logger import get_logger
from src.utils.seeding import derive_seed

logger = get_logger(__name__)

FEATURE_BATCH = 500


@dataclass
class ProbeOutcome:
    head: ProbeHead
    test_accuracy: float
    val_accuracy: float
    best_epoch: int


class FeatureCache:
    """Backbone features on disk, keyed by encoder checksum and split name."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def path_for(self, checksum: str, split: str) -> Path:
        return self.directory / f"{checksum[:24]}_{split}.npy"

    def get_or_compute(self, checksum: str, split: str, compute: Callable[[], np.ndarray]) -> np.ndarray:
        path = self.path_for(checksum, split)
        if path.exists():
            try:
                return np.load(path, allow_pickle=False)
            except (OSError, ValueError) as e:
                logger.warning("Discarding unreadable feature cache entry", path=str(path), error=str(e))
        features = compute()
        atomic_save_array(path, features)
        return features


def extract_features(encoder: FrozenEncoder, images: np.ndarray, batch_size: int = FEATURE_BATCH) -> np.ndarray:
    """Backbone features of ``images`` in eval mode, batch by batch."""
    chunks: List[np.ndarray] = []
    for start in range(0, len(images), batch_size):
        chunks.append(encoder.features(images[start:start + batch_size]).data)
    if not chunks:
        return np.zeros((0, encoder.d_feat), dtype=np.float32)
    return np.concatenate(chunks)


def predict_logits(head: ProbeHead, features: np.ndarray) -> np.ndarray:
    return head(Tensor(features)).data


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """
    Percentage of rows whose argmax equals the label; ties go to the lowest index.

    Raises:
        ContractError: On empty input
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractError("accuracy needs at least one example")
    if logits.shape[0] != len(labels):
        raise DimensionError("Logit rows and labels differ", expected=len(labels), actual=logits.shape[0])
    predictions = np.argmax(logits, axis=1)
    return 100.0 * float(np.count_nonzero(predictions == labels)) / len(labels)


def accuracy(probe: ProbeHead, frozen_model: FrozenEncoder, images: np.ndarray, labels: np.ndarray) -> float:
    """Probe accuracy (percent) on ``images`` through ``frozen_model``'s backbone."""
    if len(labels) == 0:
        raise ContractError("accuracy needs at least one example")
    return accuracy_from_logits(predict_logits(probe, extract_features(frozen_model, images)), labels)


def fit_probe(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    class_count: int,
    config: ProbeConfig,
    seed: int,
    val_features: Optional[np.ndarray] = None,
    val_labels: Optional[np.ndarray] = None,
) -> Tuple[ProbeHead, int]:
    """
    Fit a linear head on fixed features.

    With ``config.select_on_val`` and a non-empty validation set, the
    weights of the best validation epoch are kept. Returns ``(head, epoch)``.
    """
    train_features = np.asarray(train_features)
    head = ProbeHead(train_features.shape[1], class_count, dtype=train_features.dtype.name)
    params = head.parameters()
    optimizer = Adam(params, lr=config.lr)
    iterator = BatchIterator(np.arange(len(train_features)), config.batch_size, seed, drop_last=False)
    select = config.select_on_val and val_labels is not None and len(val_labels) > 0

    best_epoch = config.epochs
    best_acc = -1.0
    best_state: Optional[List[np.ndarray]] = None
    for epoch in range(1, config.epochs + 1):
        for indices in iterator.epoch_batches():
            with Tape() as tape:
                logits = head(Tensor(train_features[indices]))
                loss = softmax_cross_entropy(logits, train_labels[indices])
            backward(tape, loss)
            optimizer.step()
        iterator.reset(epoch)
        if select:
            val_acc = accuracy_from_logits(predict_logits(head, val_features), val_labels)
            if val_acc > best_acc:
                best_acc, best_epoch = val_acc, epoch
                best_state = [p.value.data.copy() for p in params]
    if best_state is not None:
        for param, value in zip(params, best_state):
            param.value.data[...] = value
    head.eval()
    return head, best_epoch


def evaluate_encoder(
    encoder: FrozenEncoder,
    data: TrainingData,
    config: ProbeConfig,
    seed: int,
    cache: Optional[FeatureCache] = None,
) -> ProbeOutcome:
    """Train a probe on the train split and report test and validation accuracy."""
    checksum = parameter_checksum(encoder)

    def features_for(split: str, images: np.ndarray) -> np.ndarray:
        if cache is None:
            return extract_features(encoder, images)
        return cache.get_or_compute(checksum, split, lambda: extract_features(encoder, images))

    train_features = features_for("train", data.train_images)
    val_features = features_for("val", data.val_images)
    test_features = features_for("test", data.test_images)

    head, best_epoch = fit_probe(
        train_features,
        data.train_labels,
        data.dataset.class_count,
        config,
        derive_seed(seed, "probe", config.seed_offset),
        val_features,
        data.val_labels,
    )
    test_acc = accuracy_from_logits(predict_logits(head, test_features), data.test_labels)
    if len(data.val_labels):
        val_acc = accuracy_from_logits(predict_logits(head, val_features), data.val_labels)
    else:
        logger.warning("Validation split is empty; reporting validation accuracy as 0")
        val_acc = 0.0
    logger.info("Probe evaluated", test_accuracy=test_acc, val_accuracy=val_acc, epoch=best_epoch)
    return ProbeOutcome(head=head, test_accuracy=test_acc, val_accuracy=val_acc, best_epoch=best_epoch)


def train_probe(
    frozen_model: FrozenEncoder,
    data: TrainingData,
    probe_config: ProbeConfig,
    seed: int = 0,
    cache: Optional[FeatureCache] = None,
) -> ProbeHead:
    """Linear head trained on ``frozen_model``'s train-split features."""
    return evaluate_encoder(frozen_model, data, probe_config, seed, cache).head
