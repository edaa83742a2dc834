"""
Paired view generation.

Every image of every batch gets two independent rng substreams, one per
view, derived from ``(task_seed, batch_index, view, image_index)``. The
whole view stream is therefore a pure function of the task seed and the
batch index, and no two views share a stream.
"""
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from src.augment.params import AugmentationParams
from src.augment.transforms import apply
from src.core.exceptions import ContractError
from src.core.types import AugmentationKind, ViewPair
from src.utils.seeding import make_rng

VIEW_A = "view_a"
VIEW_B = "view_b"

KindSpec = Union[AugmentationKind, Sequence[AugmentationKind]]


@dataclass(frozen=True)
class AugmentationStream:
    """Random-stream coordinates of one batch."""
    task_seed: int
    batch_index: int

    def image_rng(self, view: str, image_index: int) -> np.random.Generator:
        return make_rng(self.task_seed, self.batch_index, view, image_index)


def apply_view(
    kind: AugmentationKind,
    params: AugmentationParams,
    image: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One view of one image; with ``base_crop`` a random crop runs first."""
    if params.base_crop and kind is not AugmentationKind.CROP:
        image = apply(AugmentationKind.CROP, params, image, rng)
    return apply(kind, params, image, rng)


def make_view_pair(
    kinds: KindSpec,
    params: AugmentationParams,
    batch: np.ndarray,
    stream: AugmentationStream,
) -> ViewPair:
    """
    Two independently augmented views of ``batch [n x c x h x w]``.

    ``kinds`` is either one family for the whole batch or one family per image.
    """
    n = len(batch)
    per_image: List[AugmentationKind]
    if isinstance(kinds, AugmentationKind):
        per_image = [kinds] * n
    else:
        per_image = list(kinds)
        if len(per_image) != n:
            raise ContractError(f"Got {len(per_image)} kinds for a batch of {n} images")

    view_a = np.empty_like(batch)
    view_b = np.empty_like(batch)
    for i, kind in enumerate(per_image):
        view_a[i] = apply_view(kind, params, batch[i], stream.image_rng(VIEW_A, i))
        view_b[i] = apply_view(kind, params, batch[i], stream.image_rng(VIEW_B, i))
    return ViewPair(view_a=view_a, view_b=view_b, kinds=per_image)
