"""
Stochastic augmentation families.

Each family draws its own parameters from a numpy ``Generator`` and maps a
``[c x h x w]`` image in [0, 1] to an image of the same shape. The apply
probability is always drawn first, so a family consumes the same leading
draw whether or not it fires. Output is clipped to [0, 1] once at the end.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np
from skimage.color import hsv2rgb, rgb2hsv
from skimage.transform import AffineTransform, ProjectiveTransform, estimate_transform, rotate, warp

from src.augment.params import AugmentationParams
from src.core.exceptions import ContractError
from src.core.types import AugmentationKind

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CROP_ATTEMPTS = 10


@dataclass(frozen=True)
class CropBox:
    top: int
    left: int
    height: int
    width: int


def grayscale_convert(image: np.ndarray) -> np.ndarray:
    """
    Luminance ``0.299 R + 0.587 G + 0.114 B`` replicated to three channels.

    Raises:
        ContractError: If the image does not have exactly 3 channels
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"grayscale_convert needs a 3-channel image, got shape {image.shape}")
    luma = np.tensordot(LUMA_WEIGHTS, image, axes=(0, 0))
    return np.broadcast_to(luma, image.shape).astype(image.dtype)


def _luminance(image: np.ndarray) -> np.ndarray:
    if image.shape[0] == 3:
        return np.tensordot(LUMA_WEIGHTS, image, axes=(0, 0))
    return image.mean(axis=0)


def sample_crop_box(height: int, width: int, params: AugmentationParams, rng: np.random.Generator) -> CropBox:
    """
    Random box with area fraction in ``crop_scale`` and aspect in ``crop_ratio``.

    Up to ten draws are tried; when none fits, the full image is used.
    """
    area = height * width
    for _ in range(CROP_ATTEMPTS):
        target = area * rng.uniform(*params.crop_scale)
        ratio = rng.uniform(*params.crop_ratio)
        crop_w = int(round(math.sqrt(target * ratio)))
        crop_h = int(round(math.sqrt(target / ratio)))
        if 0 < crop_w <= width and 0 < crop_h <= height:
            top = int(rng.integers(0, height - crop_h + 1))
            left = int(rng.integers(0, width - crop_w + 1))
            return CropBox(top, left, crop_h, crop_w)
    return CropBox(0, 0, height, width)


def resized_crop(image: np.ndarray, box: CropBox, out_height: int, out_width: int) -> np.ndarray:
    """Nearest-neighbour resize of ``box``: output pixel i reads source ``floor(i * ch / h)``."""
    rows = box.top + (np.arange(out_height) * box.height) // out_height
    cols = box.left + (np.arange(out_width) * box.width) // out_width
    return image[:, rows[:, None], cols[None, :]]


def _channels_last(image: np.ndarray) -> np.ndarray:
    return np.moveaxis(image, 0, -1).astype(np.float64)


def _channels_first(image: np.ndarray) -> np.ndarray:
    return np.moveaxis(image, -1, 0)


def _warp(image: np.ndarray, inverse: ProjectiveTransform) -> np.ndarray:
    warped = warp(_channels_last(image), inverse, order=1, mode="constant", cval=0.0, preserve_range=True)
    return _channels_first(warped)


def _crop(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    _, h, w = image.shape
    return resized_crop(image, sample_crop_box(h, w, params, rng), h, w)


def _flip(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    return image[:, :, ::-1]


def _jitter(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    brightness = rng.uniform(*params.jitter_brightness)
    contrast = rng.uniform(*params.jitter_contrast)
    saturation = rng.uniform(*params.jitter_saturation)
    hue = rng.uniform(*params.jitter_hue)

    out = image.astype(np.float64) * brightness
    mean_luma = _luminance(out).mean()
    out = (out - mean_luma) * contrast + mean_luma
    if image.shape[0] != 3:
        return out
    gray = _luminance(out)
    out = (out - gray) * saturation + gray
    if hue != 0.0:
        # HSV conversion is only defined on [0, 1]
        hsv = rgb2hsv(_channels_last(np.clip(out, 0.0, 1.0)))
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        out = _channels_first(hsv2rgb(hsv))
    return out


def _gaussian_noise(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    return image + params.noise_sigma * rng.standard_normal(image.shape)


def _grayscale(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    return grayscale_convert(image)


def _perspective(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    _, h, w = image.shape
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    side = np.array([w, h], dtype=np.float64)
    shifted = corners + rng.uniform(-params.perspective_distortion, params.perspective_distortion, (4, 2)) * side
    # maps output coordinates to the displaced source corners
    inverse = estimate_transform("projective", corners, shifted)
    if inverse is None or not np.isfinite(inverse.params).all():
        return image
    return _warp(image, inverse)


def _affine(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    _, h, w = image.shape
    angle = math.radians(rng.uniform(-params.affine_degrees, params.affine_degrees))
    tx, ty = rng.uniform(-params.affine_translate, params.affine_translate, 2) * np.array([w, h])
    scale = rng.uniform(*params.affine_scale)
    shear = math.radians(rng.uniform(-params.affine_shear, params.affine_shear))

    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    to_origin = AffineTransform(translation=-center).params
    back = AffineTransform(translation=center + np.array([tx, ty])).params
    core = AffineTransform(scale=(scale, scale), rotation=angle, shear=shear).params
    forward = back @ core @ to_origin
    return _warp(image, ProjectiveTransform(matrix=np.linalg.inv(forward)))


def _rotation(image: np.ndarray, params: AugmentationParams, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(-params.rotation_degrees, params.rotation_degrees)
    rotated = rotate(
        _channels_last(image), angle, resize=False, order=1, mode="constant", cval=0.0, preserve_range=True
    )
    return _channels_first(rotated)


Family = Callable[[np.ndarray, AugmentationParams, np.random.Generator], np.ndarray]

FAMILIES: Dict[AugmentationKind, Family] = {
    AugmentationKind.CROP: _crop,
    AugmentationKind.FLIP: _flip,
    AugmentationKind.JITTER: _jitter,
    AugmentationKind.GAUSSIAN_NOISE: _gaussian_noise,
    AugmentationKind.GRAYSCALE: _grayscale,
    AugmentationKind.PERSPECTIVE: _perspective,
    AugmentationKind.AFFINE: _affine,
    AugmentationKind.ROTATION: _rotation,
}

_PROBABILITY_FIELD = {
    AugmentationKind.CROP: "crop_p",
    AugmentationKind.FLIP: "flip_p",
    AugmentationKind.JITTER: "jitter_p",
    AugmentationKind.GAUSSIAN_NOISE: "noise_p",
    AugmentationKind.GRAYSCALE: "grayscale_p",
    AugmentationKind.PERSPECTIVE: "perspective_p",
    AugmentationKind.AFFINE: "affine_p",
    AugmentationKind.ROTATION: "rotation_p",
}


def apply_probability(kind: AugmentationKind, params: AugmentationParams) -> float:
    return getattr(params, _PROBABILITY_FIELD[kind])


def apply(
    kind: AugmentationKind,
    params: AugmentationParams,
    image: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    One independent draw of family ``kind`` applied to ``image [c x h x w]``.

    Raises:
        ContractError: If ``kind`` is not an augmentation family or the image is not 3-D
    """
    family = FAMILIES.get(kind) if isinstance(kind, AugmentationKind) else None
    if family is None:
        raise ContractError(f"Unknown augmentation kind: {kind!r}")
    if image.ndim != 3:
        raise ContractError(f"apply needs a [c x h x w] image, got shape {image.shape}")

    fires = rng.random() < apply_probability(kind, params)
    if not fires:
        return image.copy()
    out = family(image, params, rng)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def was_flipped(original: np.ndarray, augmented: np.ndarray) -> bool:
    """True when ``augmented`` is the horizontal mirror of a non-symmetric ``original``."""
    mirrored = original[:, :, ::-1]
    return not np.array_equal(original, mirrored) and np.array_equal(augmented, mirrored)
