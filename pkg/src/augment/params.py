"""
Augmentation family parameters.

Magnitudes and probabilities are not fixed by the method itself; the defaults
below are the values every experiment uses unless the config overrides them.
"""
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Mapping, Tuple

from src.core.exceptions import ConfigurationError

Range = Tuple[float, float]

_RANGE_FIELDS = (
    "crop_scale",
    "crop_ratio",
    "jitter_brightness",
    "jitter_contrast",
    "jitter_saturation",
    "jitter_hue",
    "affine_scale",
)

_PROBABILITY_FIELDS = (
    "crop_p",
    "flip_p",
    "jitter_p",
    "noise_p",
    "grayscale_p",
    "perspective_p",
    "affine_p",
    "rotation_p",
)


@dataclass(frozen=True)
class AugmentationParams:
    """Per-family ranges and per-view apply probabilities."""

    # Crop: area fraction and aspect ratio, nearest-neighbour resize back
    crop_scale: Range = (0.3, 1.0)
    crop_ratio: Range = (3.0 / 4.0, 4.0 / 3.0)
    crop_p: float = 1.0

    flip_p: float = 0.5

    # Jitter factors, applied brightness -> contrast -> saturation -> hue
    jitter_brightness: Range = (0.6, 1.4)
    jitter_contrast: Range = (0.6, 1.4)
    jitter_saturation: Range = (0.6, 1.4)
    jitter_hue: Range = (-0.1, 0.1)
    jitter_p: float = 0.8

    noise_sigma: float = 0.1
    noise_p: float = 1.0

    grayscale_p: float = 0.5

    # Corner displacement as a fraction of the side length
    perspective_distortion: float = 0.3
    perspective_p: float = 0.5

    affine_degrees: float = 15.0
    affine_translate: float = 0.1
    affine_scale: Range = (0.9, 1.1)
    affine_shear: float = 10.0
    affine_p: float = 1.0

    rotation_degrees: float = 45.0
    rotation_p: float = 1.0

    # Deviation knob: apply a random crop underneath every other family
    base_crop: bool = False

    lineage: str = "augcl"

    def validate(self) -> List[str]:
        """Return a list of ``field: message`` problems, empty when valid."""
        errors: List[str] = []
        for name in _RANGE_FIELDS:
            low, high = getattr(self, name)
            if low > high:
                errors.append(f"augmentations.{name}: empty range [{low}, {high}]")
        for name in _PROBABILITY_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                errors.append(f"augmentations.{name}: probability {value} outside [0, 1]")
        if self.crop_scale[0] <= 0 or self.crop_scale[1] > 1:
            errors.append("augmentations.crop_scale: must lie within (0, 1]")
        if self.crop_ratio[0] <= 0:
            errors.append("augmentations.crop_ratio: must be positive")
        if self.affine_scale[0] <= 0:
            errors.append("augmentations.affine_scale: must be positive")
        for name in ("noise_sigma", "perspective_distortion", "affine_degrees",
                     "affine_translate", "affine_shear", "rotation_degrees"):
            if getattr(self, name) < 0:
                errors.append(f"augmentations.{name}: must be non-negative")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for name in _RANGE_FIELDS:
            data[name] = list(data[name])
        return data

    @classmethod
    def from_overrides(cls, overrides: Mapping[str, Any]) -> "AugmentationParams":
        """Build parameters from config overrides, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigurationError(
                "Unknown augmentation parameters",
                [f"augmentations.{key}: unknown key" for key in unknown],
            )
        values: Dict[str, Any] = {}
        errors: List[str] = []
        for key, value in overrides.items():
            if key in _RANGE_FIELDS:
                if not isinstance(value, (list, tuple)) or len(value) != 2:
                    errors.append(f"augmentations.{key}: expected a [low, high] pair")
                    continue
                values[key] = (float(value[0]), float(value[1]))
            elif key == "base_crop":
                if not isinstance(value, bool):
                    errors.append("augmentations.base_crop: expected a boolean")
                    continue
                values[key] = value
            elif key == "lineage":
                values[key] = str(value)
            else:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    errors.append(f"augmentations.{key}: expected a number")
                    continue
                values[key] = float(value)
        if errors:
            raise ConfigurationError("Invalid augmentation parameters", errors)
        params = cls(**values)
        problems = params.validate()
        if problems:
            raise ConfigurationError("Invalid augmentation parameters", problems)
        return params
