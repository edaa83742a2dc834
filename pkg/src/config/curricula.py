"""
Built-in training curricula.

Each curriculum is an ordered list of augmentation families, one per task.
A1-A5 draw from the CIFAR families, B1-B5 from the MNIST families.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

from src.core.types import AugmentationKind, kinds_for_dataset

_C = AugmentationKind.CROP
_F = AugmentationKind.FLIP
_J = AugmentationKind.JITTER
_GN = AugmentationKind.GAUSSIAN_NOISE
_G = AugmentationKind.GRAYSCALE
_P = AugmentationKind.PERSPECTIVE
_AF = AugmentationKind.AFFINE
_R = AugmentationKind.ROTATION

CUSTOM_ID = "custom"


@dataclass(frozen=True)
class Curriculum:
    """An ordered assignment of augmentation families to task positions."""
    id: str
    tasks: Tuple[AugmentationKind, ...]

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("Curriculum must contain at least one task")

    def __len__(self) -> int:
        return len(self.tasks)

    def prefix(self, k: int) -> Tuple[AugmentationKind, ...]:
        """First ``k`` tasks."""
        if not 1 <= k <= len(self.tasks):
            raise ValueError(f"Prefix length must be within [1, {len(self.tasks)}], got {k}")
        return self.tasks[:k]

    def validate_for(self, dataset_name: str) -> List[str]:
        """Return problems when a task is outside the dataset's families."""
        allowed = kinds_for_dataset(dataset_name)
        return [
            f"curriculum: {kind.value} is not a {dataset_name} augmentation"
            for kind in self.tasks
            if kind not in allowed
        ]

    def to_config_value(self) -> Union[str, List[str]]:
        if self.id in BUILTIN_CURRICULA:
            return self.id
        return [kind.value for kind in self.tasks]


BUILTIN_CURRICULA: Dict[str, Curriculum] = {
    # CIFAR-10 / CIFAR-100
    "A1": Curriculum("A1", (_C, _F, _J, _GN, _G)),
    "A2": Curriculum("A2", (_C, _J, _G, _F, _GN)),
    "A3": Curriculum("A3", (_J, _F, _GN, _C, _G)),
    "A4": Curriculum("A4", (_J, _GN, _F, _G, _C)),
    "A5": Curriculum("A5", (_G, _GN, _J, _F, _C)),
    # MNIST
    "B1": Curriculum("B1", (_C, _P, _AF, _R, _GN)),
    "B2": Curriculum("B2", (_GN, _R, _AF, _P, _C)),
    "B3": Curriculum("B3", (_AF, _P, _R, _C, _GN)),
    "B4": Curriculum("B4", (_AF, _R, _P, _GN, _C)),
    "B5": Curriculum("B5", (_P, _R, _AF, _GN, _C)),
}


def get_curriculum(value: Union[str, Sequence[str], Curriculum]) -> Curriculum:
    """Resolve a curriculum id or an explicit list of kinds."""
    if isinstance(value, Curriculum):
        return value
    if isinstance(value, str):
        key = value.strip().upper()
        if key not in BUILTIN_CURRICULA:
            raise ValueError(f"Unknown curriculum id: {value}")
        return BUILTIN_CURRICULA[key]
    tasks = tuple(AugmentationKind.parse(item) for item in value)
    return Curriculum(CUSTOM_ID, tasks)


def default_curricula(dataset_name: str) -> List[Curriculum]:
    """The five built-in curricula for a dataset."""
    prefix = "B" if dataset_name == "mnist" else "A"
    return [BUILTIN_CURRICULA[f"{prefix}{i}"] for i in range(1, 6)]
