"""Tests for augmentation families and paired view generation."""
from dataclasses import replace

import numpy as np
import pytest

from src.augment.params import AugmentationParams
from src.augment.transforms import CropBox, apply, grayscale_convert, resized_crop, sample_crop_box, was_flipped
from src.augment.views import AugmentationStream, make_view_pair
from src.core.exceptions import ConfigurationError, ContractError
from src.core.types import AugmentationKind

ALL_KINDS = list(AugmentationKind)


@pytest.fixture
def params():
    return AugmentationParams()


@pytest.fixture
def color_image(rng):
    return rng.random((3, 8, 8)).astype(np.float32)


@pytest.fixture
def gray_batch(rng):
    return rng.random((4, 1, 12, 12)).astype(np.float32)


class TestFamilies:
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    def test_shape_dtype_and_range(self, kind, params, color_image, rng):
        out = apply(kind, params, color_image, rng)
        assert out.shape == color_image.shape
        assert out.dtype == color_image.dtype
        assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    def test_same_stream_same_output(self, kind, params, color_image):
        a = apply(kind, params, color_image, np.random.default_rng(11))
        b = apply(kind, params, color_image, np.random.default_rng(11))
        np.testing.assert_array_equal(a, b)

    def test_zero_probability_is_identity(self, color_image, rng):
        params = AugmentationParams(noise_p=0.0)
        out = apply(AugmentationKind.GAUSSIAN_NOISE, params, color_image, rng)
        np.testing.assert_array_equal(out, color_image)
        assert out is not color_image

    def test_flip_mirrors_columns(self, color_image, rng):
        params = AugmentationParams(flip_p=1.0)
        out = apply(AugmentationKind.FLIP, params, color_image, rng)
        np.testing.assert_array_equal(out, color_image[:, :, ::-1])
        assert was_flipped(color_image, out)

    def test_flip_probability_is_respected(self, color_image):
        params = AugmentationParams(flip_p=0.5)
        flips = sum(
            was_flipped(color_image, apply(AugmentationKind.FLIP, params, color_image, np.random.default_rng(s)))
            for s in range(400)
        )
        assert 150 < flips < 250

    def test_grayscale_of_pure_red(self, rng):
        image = np.zeros((3, 2, 2), dtype=np.float32)
        image[0] = 1.0
        out = apply(AugmentationKind.GRAYSCALE, AugmentationParams(grayscale_p=1.0), image, rng)
        np.testing.assert_allclose(out, np.full((3, 2, 2), 0.299), rtol=1e-6)

    def test_grayscale_needs_three_channels(self):
        with pytest.raises(ContractError):
            grayscale_convert(np.zeros((1, 4, 4)))

    def test_noise_sigma_scales_perturbation(self, rng):
        image = np.full((1, 16, 16), 0.5)
        out = apply(AugmentationKind.GAUSSIAN_NOISE, AugmentationParams(noise_sigma=0.01), image, rng)
        assert 0.0 < np.abs(out - image).max() < 0.1

    def test_full_scale_crop_is_identity(self, color_image, rng):
        params = AugmentationParams(crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0))
        out = apply(AugmentationKind.CROP, params, color_image, rng)
        np.testing.assert_array_equal(out, color_image)

    @pytest.mark.parametrize(
        "kind,overrides",
        [
            (AugmentationKind.ROTATION, {"rotation_degrees": 0.0}),
            (AugmentationKind.PERSPECTIVE, {"perspective_distortion": 0.0, "perspective_p": 1.0}),
            (
                AugmentationKind.AFFINE,
                {"affine_degrees": 0.0, "affine_translate": 0.0, "affine_scale": (1.0, 1.0), "affine_shear": 0.0},
            ),
        ],
        ids=lambda v: v.value if isinstance(v, AugmentationKind) else None,
    )
    def test_zero_strength_geometry_is_identity(self, kind, overrides, color_image, rng):
        params = replace(AugmentationParams(), **overrides)
        out = apply(kind, params, color_image, rng)
        np.testing.assert_allclose(out, color_image, atol=1e-5)

    def test_rotation_moves_pixels(self, rng):
        image = np.zeros((1, 9, 9))
        image[0, 4, :] = 1.0
        params = AugmentationParams(rotation_degrees=90.0)
        out = apply(AugmentationKind.ROTATION, params, image, rng)
        assert not np.allclose(out, image)

    def test_jitter_on_single_channel(self, gray_batch, rng):
        params = AugmentationParams(jitter_p=1.0)
        out = apply(AugmentationKind.JITTER, params, gray_batch[0], rng)
        assert out.shape == gray_batch[0].shape

    def test_unknown_kind_rejected(self, params, color_image, rng):
        with pytest.raises(ContractError):
            apply("Crop", params, color_image, rng)

    def test_batch_input_rejected(self, params, gray_batch, rng):
        with pytest.raises(ContractError):
            apply(AugmentationKind.CROP, params, gray_batch, rng)


class TestCrop:
    def test_box_area_within_scale(self, params):
        rng = np.random.default_rng(0)
        for _ in range(50):
            box = sample_crop_box(32, 32, params, rng)
            assert 0 < box.height <= 32 and 0 < box.width <= 32
            assert box.top + box.height <= 32 and box.left + box.width <= 32

    def test_impossible_scale_falls_back_to_full_image(self, rng):
        params = AugmentationParams(crop_scale=(1.0, 1.0), crop_ratio=(4.0, 4.0))
        assert sample_crop_box(8, 8, params, rng) == CropBox(0, 0, 8, 8)

    def test_aspect_drawn_uniformly_from_ratio_range(self, params, mocker):
        rng = mocker.MagicMock()
        rng.uniform.side_effect = [0.5, 1.0]
        rng.integers.return_value = 0
        box = sample_crop_box(32, 32, params, rng)
        assert rng.uniform.call_args_list[1] == mocker.call(0.75, 4.0 / 3.0)
        assert box == CropBox(0, 0, 23, 23)

    def test_aspect_mean_is_range_midpoint(self):
        params = AugmentationParams(crop_scale=(0.01, 0.01), crop_ratio=(0.5, 2.0))
        rng = np.random.default_rng(3)
        ratios = [box.width / box.height for box in (sample_crop_box(1000, 1000, params, rng) for _ in range(4000))]
        # log-uniform over the same range would centre near 1.08
        assert np.mean(ratios) == pytest.approx(1.25, abs=0.03)

    def test_nearest_neighbour_resize(self):
        image = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        out = resized_crop(image, CropBox(0, 0, 2, 2), 4, 4)
        expected = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [4, 4, 5, 5], [4, 4, 5, 5]], dtype=np.float32)
        np.testing.assert_array_equal(out[0], expected)


class TestViewPairs:
    def test_views_are_independent(self, params, gray_batch):
        pair = make_view_pair(AugmentationKind.GAUSSIAN_NOISE, params, gray_batch, AugmentationStream(5, 0))
        assert pair.view_a.shape == gray_batch.shape
        assert not np.array_equal(pair.view_a, pair.view_b)
        assert pair.kinds == [AugmentationKind.GAUSSIAN_NOISE] * 4

    def test_stream_is_reproducible(self, params, gray_batch):
        kind = AugmentationKind.AFFINE
        first = make_view_pair(kind, params, gray_batch, AugmentationStream(5, 3))
        second = make_view_pair(kind, params, gray_batch, AugmentationStream(5, 3))
        np.testing.assert_array_equal(first.view_a, second.view_a)
        np.testing.assert_array_equal(first.view_b, second.view_b)

    def test_batch_index_changes_stream(self, params, gray_batch):
        kind = AugmentationKind.GAUSSIAN_NOISE
        first = make_view_pair(kind, params, gray_batch, AugmentationStream(5, 0))
        second = make_view_pair(kind, params, gray_batch, AugmentationStream(5, 1))
        assert not np.array_equal(first.view_a, second.view_a)

    def test_per_image_kinds(self, gray_batch):
        params = AugmentationParams(noise_p=0.0, rotation_p=1.0)
        kinds = [AugmentationKind.GAUSSIAN_NOISE, AugmentationKind.ROTATION] * 2
        pair = make_view_pair(kinds, params, gray_batch, AugmentationStream(1, 0))
        np.testing.assert_array_equal(pair.view_a[0], gray_batch[0])
        assert pair.kinds == kinds

    def test_kind_count_must_match_batch(self, params, gray_batch):
        with pytest.raises(ContractError):
            make_view_pair([AugmentationKind.CROP], params, gray_batch, AugmentationStream(1, 0))

    def test_base_crop_runs_under_other_families(self, gray_batch):
        plain = AugmentationParams(noise_p=0.0)
        with_crop = replace(plain, base_crop=True)
        stream = AugmentationStream(2, 0)
        untouched = make_view_pair(AugmentationKind.GAUSSIAN_NOISE, plain, gray_batch, stream)
        cropped = make_view_pair(AugmentationKind.GAUSSIAN_NOISE, with_crop, gray_batch, stream)
        np.testing.assert_array_equal(untouched.view_a, gray_batch)
        assert not np.array_equal(cropped.view_a, gray_batch)


class TestParams:
    def test_overrides_parse_ranges(self):
        params = AugmentationParams.from_overrides({"crop_scale": [0.5, 1.0], "flip_p": 1})
        assert params.crop_scale == (0.5, 1.0)
        assert params.flip_p == 1.0

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigurationError) as exc_info:
            AugmentationParams.from_overrides({"blur_sigma": 1.0})
        assert exc_info.value.errors == ["augmentations.blur_sigma: unknown key"]

    @pytest.mark.parametrize(
        "overrides",
        [{"flip_p": 1.5}, {"crop_scale": [0.9, 0.1]}, {"noise_sigma": -1.0}, {"base_crop": "yes"}, {"jitter_hue": 3}],
    )
    def test_invalid_values_rejected(self, overrides):
        with pytest.raises(ConfigurationError):
            AugmentationParams.from_overrides(overrides)


class TestKindNames:
    @pytest.mark.parametrize(
        "name,kind",
        [
            ("Crop", AugmentationKind.CROP),
            ("GN", AugmentationKind.GAUSSIAN_NOISE),
            ("gaussian-noise", AugmentationKind.GAUSSIAN_NOISE),
            ("Rot.", AugmentationKind.ROTATION),
            ("Persp.", AugmentationKind.PERSPECTIVE),
            ("color_jitter", AugmentationKind.JITTER),
        ],
    )
    def test_parse_aliases(self, name, kind):
        assert AugmentationKind.parse(name) is kind

    def test_parse_unknown(self):
        with pytest.raises(ValueError):
            AugmentationKind.parse("Blur")
