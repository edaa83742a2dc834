"""
Type definitions for augcl.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np


class AugmentationKind(Enum):
    """Augmentation families; each family is one learning task."""
    CROP = "Crop"
    FLIP = "Flip"
    JITTER = "Jitter"
    GAUSSIAN_NOISE = "GaussianNoise"
    GRAYSCALE = "Grayscale"
    PERSPECTIVE = "Perspective"
    AFFINE = "Affine"
    ROTATION = "Rotation"

    @classmethod
    def parse(cls, value: Union[str, "AugmentationKind"]) -> "AugmentationKind":
        """Parse a kind from its name or one of the short table labels."""
        if isinstance(value, AugmentationKind):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        key = key.rstrip(".")
        if key in _KIND_ALIASES:
            return _KIND_ALIASES[key]
        raise ValueError(f"Unknown augmentation kind: {value}")


_KIND_ALIASES: Dict[str, AugmentationKind] = {
    "crop": AugmentationKind.CROP,
    "flip": AugmentationKind.FLIP,
    "jitter": AugmentationKind.JITTER,
    "colorjitter": AugmentationKind.JITTER,
    "gaussiannoise": AugmentationKind.GAUSSIAN_NOISE,
    "noise": AugmentationKind.GAUSSIAN_NOISE,
    "gn": AugmentationKind.GAUSSIAN_NOISE,
    "grayscale": AugmentationKind.GRAYSCALE,
    "gray": AugmentationKind.GRAYSCALE,
    "perspective": AugmentationKind.PERSPECTIVE,
    "persp": AugmentationKind.PERSPECTIVE,
    "affine": AugmentationKind.AFFINE,
    "rotation": AugmentationKind.ROTATION,
    "rot": AugmentationKind.ROTATION,
}

CIFAR_KINDS: Tuple[AugmentationKind, ...] = (
    AugmentationKind.CROP,
    AugmentationKind.FLIP,
    AugmentationKind.JITTER,
    AugmentationKind.GAUSSIAN_NOISE,
    AugmentationKind.GRAYSCALE,
)

MNIST_KINDS: Tuple[AugmentationKind, ...] = (
    AugmentationKind.CROP,
    AugmentationKind.PERSPECTIVE,
    AugmentationKind.AFFINE,
    AugmentationKind.ROTATION,
    AugmentationKind.GAUSSIAN_NOISE,
)


def kinds_for_dataset(dataset_name: str) -> Tuple[AugmentationKind, ...]:
    """Augmentation families a dataset's curricula may draw from."""
    if dataset_name == "mnist":
        return MNIST_KINDS
    if dataset_name in ("cifar10", "cifar100"):
        return CIFAR_KINDS
    raise ValueError(f"Unknown dataset: {dataset_name}")


class TrainMode(Enum):
    """Training regimes compared by an experiment."""
    CL = "CL"
    MTL = "MTL"


class MtlSampling(Enum):
    """Granularity of the task draw in joint training."""
    PER_BATCH = "per-batch"
    PER_SAMPLE = "per-sample"
    PER_EPOCH = "per-epoch"


class Arch(Enum):
    """Backbone architectures."""
    MLP_S = "mlp-s"
    CONV_S = "conv-s"
    RESNET18 = "resnet18"


@dataclass
class Split:
    """Train / validation / test index partition."""
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    seed: int


@dataclass
class ViewPair:
    """Two independently augmented renditions of one batch."""
    view_a: np.ndarray
    view_b: np.ndarray
    kinds: List[AugmentationKind] = field(default_factory=list)


@dataclass
class LossBreakdown:
    """Loss terms of one optimizer step."""
    total: float
    ssl_term: float
    distill_a: float = 0.0
    distill_b: float = 0.0
    lambd: float = 0.005
    gamma: float = 0.5
    objective: Optional[object] = field(default=None, repr=False, compare=False)

    def as_row(self) -> Dict[str, float]:
        return {
            "ssl_term": self.ssl_term,
            "distill_a": self.distill_a,
            "distill_b": self.distill_b,
            "total": self.total,
        }


@dataclass
class StepRecord:
    """One row of the per-step loss log."""
    step: int
    task: int
    kind: str
    ssl_term: float
    distill_a: float
    distill_b: float
    total: float


@dataclass
class TaskResult:
    """Outcome of training one task (CL) or one joint prefix (MTL)."""
    task_index: int
    mode: TrainMode
    kinds: List[AugmentationKind]
    loss_series: List[StepRecord] = field(default_factory=list)
    checkpoint: Optional[Path] = None
    steps: int = 0
    batches_per_epoch: int = 0
    epochs: int = 0
    probe_accuracy: Optional[float] = None
    val_accuracy: Optional[float] = None
    frozen_checksum: Optional[str] = None
    encoder_checksum: Optional[str] = None

    @property
    def kinds_drawn(self) -> List[str]:
        """Distinct augmentation kinds that occurred in the loss log."""
        return sorted({record.kind for record in self.loss_series})


@dataclass
class EvalRecord:
    """One linear-probe measurement."""
    curriculum: str
    prefix_length: int
    mode: TrainMode
    seed: int
    probe_accuracy: float
    val_accuracy: float

    def __post_init__(self):
        for name in ("probe_accuracy", "val_accuracy"):
            value = getattr(self, name)
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"{name} must be within [0, 100], got {value}")


@dataclass
class NegativeTransferStat:
    """Accuracy drops between consecutive task prefixes."""
    mode: TrainMode
    drop_events: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def average_drop(self) -> float:
        if not self.drop_events:
            return 0.0
        return sum(delta for _, delta in self.drop_events) / len(self.drop_events)

    @property
    def drop_count(self) -> int:
        return len(self.drop_events)
