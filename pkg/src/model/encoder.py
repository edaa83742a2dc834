"""
Encoder, past-embedding predictor, frozen snapshots and the probe head.

The encoder is a backbone (feature extractor) followed by a three-layer
projector; the probe reads backbone features, distillation reads projector
outputs.
"""
import copy
from typing import Optional, Tuple, Union

import numpy as np

from src.core.exceptions import ContractError, DimensionError
from src.core.types import Arch
from src.model.layers import (
    BN_EPS,
    BasicBlock,
    BatchNorm,
    BatchNorm2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    Module,
    ReLU,
    Sequential,
)
from src.numeric.tensor import Tensor
from src.utils.io import arrays_checksum
from src.utils.seeding import make_rng

MLP_HIDDEN = 256
CONV_CHANNELS = 32
CONV_STAGES = 3
RESNET_WIDTHS = (64, 128, 256, 512)

ArrayOrTensor = Union[np.ndarray, Tensor]


def _as_input(images: ArrayOrTensor, dtype) -> Tensor:
    if isinstance(images, Tensor):
        return images
    return Tensor(np.asarray(images, dtype=dtype))


def _build_backbone(
    arch: Arch, in_channels: int, image_size: int, rng: np.random.Generator, dtype
) -> Tuple[Sequential, int]:
    if arch is Arch.MLP_S:
        d_in = in_channels * image_size * image_size
        layers = [
            Flatten(),
            Linear(d_in, MLP_HIDDEN, rng, dtype), BatchNorm(MLP_HIDDEN, dtype), ReLU(),
            Linear(MLP_HIDDEN, MLP_HIDDEN, rng, dtype), BatchNorm(MLP_HIDDEN, dtype), ReLU(),
        ]
        return Sequential(layers), MLP_HIDDEN

    if arch is Arch.CONV_S:
        layers = []
        channels, size = in_channels, image_size
        for _ in range(CONV_STAGES):
            layers += [
                Conv2d(channels, CONV_CHANNELS, 3, rng, padding=1, dtype=dtype),
                BatchNorm2d(CONV_CHANNELS, dtype),
                ReLU(),
                MaxPool2d(2),
            ]
            channels, size = CONV_CHANNELS, size // 2
        layers.append(Flatten())
        return Sequential(layers), CONV_CHANNELS * size * size

    if arch is Arch.RESNET18:
        layers = [Conv2d(in_channels, RESNET_WIDTHS[0], 3, rng, padding=1, dtype=dtype),
                  BatchNorm2d(RESNET_WIDTHS[0], dtype), ReLU()]
        channels = RESNET_WIDTHS[0]
        for stage, width in enumerate(RESNET_WIDTHS):
            stride = 1 if stage == 0 else 2
            layers.append(BasicBlock(channels, width, stride, rng, dtype))
            layers.append(BasicBlock(width, width, 1, rng, dtype))
            channels = width
        layers.append(GlobalAvgPool())
        return Sequential(layers), channels

    raise ContractError(f"Unknown architecture: {arch!r}")


def _build_projector(d_feat: int, d_proj: int, rng: np.random.Generator, dtype) -> Sequential:
    return Sequential([
        Linear(d_feat, d_proj, rng, dtype), BatchNorm(d_proj, dtype), ReLU(),
        Linear(d_proj, d_proj, rng, dtype), BatchNorm(d_proj, dtype), ReLU(),
        Linear(d_proj, d_proj, rng, dtype),
    ])


class EncoderModel(Module):
    """Backbone plus projector; ``forward`` returns embeddings ``[n x d_proj]``."""

    def __init__(
        self,
        arch: Arch,
        d_proj: int,
        seed: int,
        in_channels: int,
        image_size: int,
        dtype: str = "float32",
    ):
        super().__init__()
        self.arch = arch
        self.d_proj = d_proj
        self.seed = seed
        self.in_channels = in_channels
        self.image_size = image_size
        self.dtype = dtype
        rng = make_rng(seed, "init", "encoder")
        self.backbone, self.d_feat = _build_backbone(arch, in_channels, image_size, rng, np.dtype(dtype))
        self.projector = _build_projector(self.d_feat, d_proj, rng, np.dtype(dtype))

    def check_input(self, x: Tensor) -> None:
        expected = (self.in_channels, self.image_size, self.image_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise DimensionError(
                f"{self.arch.value} expects [n x {expected[0]} x {expected[1]} x {expected[2]}], got {x.shape}",
                expected=expected,
                actual=x.shape,
            )

    def features(self, x: Tensor) -> Tensor:
        self.check_input(x)
        return self.backbone(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.projector(self.features(x))


class Predictor(Module):
    """Past-embedding predictor: Linear-BN-ReLU-Linear, width ``d`` throughout."""

    def __init__(self, d: int, seed: int, dtype: str = "float32"):
        super().__init__()
        self.d = d
        rng = make_rng(seed, "init", "predictor")
        dt = np.dtype(dtype)
        self.net = Sequential([Linear(d, d, rng, dt), BatchNorm(d, dt), ReLU(), Linear(d, d, rng, dt)])

    def forward(self, z: Tensor) -> Tensor:
        return self.net(z)

    def zero_output_layer(self) -> None:
        out = self.net[3]
        out.weight.value.data[...] = 0
        out.bias.value.data[...] = 0

    def set_identity(self, shift: float = 100.0) -> None:
        """
        Weights under which ``g(z) == z`` in eval mode for ``|z| < shift``.

        The first layer lifts inputs above zero so the ReLU passes them, the
        running statistics make batch norm an identity, the last layer undoes the lift.
        """
        first, norm, _, last = self.net.layers
        eye = np.eye(self.d, dtype=first.weight.value.dtype)
        first.weight.value.data[...] = eye
        first.bias.value.data[...] = shift
        norm.running.mean[...] = 0.0
        norm.running.var[...] = 1.0
        norm.gamma.value.data[...] = np.sqrt(1.0 + BN_EPS)
        norm.beta.value.data[...] = 0.0
        last.weight.value.data[...] = eye
        last.bias.value.data[...] = -shift


class ProbeHead(Module):
    """Linear classifier ``d_feat -> class_count``, zero-initialised."""

    def __init__(self, d_feat: int, class_count: int, dtype: str = "float32"):
        super().__init__()
        self.linear = Linear(d_feat, class_count, np.random.default_rng(0), np.dtype(dtype))
        self.linear.weight.value.data[...] = 0

    def forward(self, x: Tensor) -> Tensor:
        return self.linear(x)


class FrozenEncoder:
    """
    Read-only snapshot of an encoder, always in eval mode.

    Parameter and running-stat arrays are marked non-writeable, so any
    attempt to train through the snapshot fails loudly.
    """

    def __init__(self, model: EncoderModel):
        self._model = model

    @property
    def arch(self) -> Arch:
        return self._model.arch

    @property
    def d_feat(self) -> int:
        return self._model.d_feat

    @property
    def d_proj(self) -> int:
        return self._model.d_proj

    def embed(self, images: ArrayOrTensor) -> Tensor:
        return self._model(_as_input(images, self._model.dtype))

    def features(self, images: ArrayOrTensor) -> Tensor:
        return self._model.features(_as_input(images, self._model.dtype))

    def state_arrays(self):
        return self._model.state_arrays()


def build_encoder(
    arch: Union[Arch, str],
    d_proj: int,
    seed: int,
    in_channels: int = 3,
    image_size: int = 32,
    dtype: str = "float32",
) -> EncoderModel:
    """
    Seeded encoder construction.

    Raises:
        ContractError: On an unknown architecture or ``d_proj < 2``
    """
    if not isinstance(arch, Arch):
        try:
            arch = Arch(arch)
        except ValueError as e:
            raise ContractError(f"Unknown architecture: {arch!r}") from e
    if d_proj < 2:
        raise ContractError(f"d_proj must be >= 2, got {d_proj}")
    return EncoderModel(arch, d_proj, seed, in_channels, image_size, dtype)


def build_predictor(d: int, seed: int, dtype: str = "float32") -> Predictor:
    return Predictor(d, seed, dtype)


def embed(model: EncoderModel, views: ArrayOrTensor) -> Tensor:
    """Backbone then projector."""
    return model(_as_input(views, model.dtype))


def features(model: Union[EncoderModel, FrozenEncoder], images: ArrayOrTensor) -> Tensor:
    """Backbone output only; the model must be in eval mode."""
    if isinstance(model, FrozenEncoder):
        return model.features(images)
    if model.training:
        raise ContractError("features() needs the encoder in eval mode")
    return model.features(_as_input(images, model.dtype))


def freeze_snapshot(model: EncoderModel) -> FrozenEncoder:
    """Deep copy with gradients, optimizer state and write access removed."""
    clone = copy.deepcopy(model)
    clone.eval()
    for param in clone.parameters():
        param.value.requires_grad = False
        param.value.grad = None
        param.value._node = None
        param.reset_state()
        param.value.data.flags.writeable = False
    for _, buffer in clone.named_buffers():
        buffer.flags.writeable = False
    return FrozenEncoder(clone)


def predict_past(g: Predictor, z: Tensor) -> Tensor:
    """Predicted past embedding ``g(z)``."""
    if z.ndim != 2 or z.shape[1] != g.d:
        raise DimensionError(f"Predictor expects width {g.d}, got {z.shape}", expected=g.d, actual=z.shape)
    return g(z)


def parameter_checksum(model: Union[Module, FrozenEncoder], extra: Optional[Module] = None) -> str:
    """SHA-256 over every parameter and running statistic."""
    arrays = [a for _, a in model.state_arrays()]
    if extra is not None:
        arrays += [a for _, a in extra.state_arrays()]
    return arrays_checksum(arrays)
