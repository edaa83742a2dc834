"""
Parameterised layers built on the numeric primitives.

Modules hold :class:`Parameter` objects and batch-norm running statistics
as plain attributes; traversal follows attribute definition order, so
parameter lists and checkpoints have a stable layout.
"""
import math
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from src.numeric import tensor as T
from src.numeric.optim import Parameter
from src.numeric.tensor import RunningStats, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    """U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class: parameter traversal and train / eval mode."""

    def __init__(self):
        self.training = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module, RunningStats)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, child in self._children():
            if isinstance(child, Parameter):
                yield prefix + name, child
            elif isinstance(child, Module):
                yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, child in self._children():
            if isinstance(child, RunningStats):
                yield f"{prefix}{name}.mean", child.mean
                yield f"{prefix}{name}.var", child.var
            elif isinstance(child, Module):
                yield from child.named_buffers(f"{prefix}{name}.")

    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Parameters followed by buffers, in traversal order."""
        return [(n, p.value.data) for n, p in self.named_parameters()] + list(self.named_buffers())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter.create(he_uniform(rng, (in_features, out_features), in_features, dtype), "weight")
        self.bias = Parameter.create(np.zeros(out_features, dtype=dtype), "bias")

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight.value) + self.bias.value


class BatchNorm(Module):
    """Batch norm over the rows of ``[n x d]`` inputs."""

    def __init__(self, width: int, dtype=np.float32):
        super().__init__()
        self.gamma = Parameter.create(np.ones(width, dtype=dtype), "gamma")
        self.beta = Parameter.create(np.zeros(width, dtype=dtype), "beta")
        self.running = RunningStats.create(width, dtype=dtype, momentum=BN_MOMENTUM)

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(
            x,
            self.gamma.value,
            self.beta.value,
            eps=BN_EPS,
            mode="train" if self.training else "eval",
            running_stats=self.running,
        )


class BatchNorm2d(BatchNorm):
    """Per-channel batch norm of ``[n x c x h x w]`` maps, statistics over n, h and w."""

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        rows = T.reshape(T.transpose(x, (0, 2, 3, 1)), (n * h * w, c))
        out = super().forward(rows)
        return T.transpose(T.reshape(out, (n, h, w, c)), (0, 3, 1, 2))


class Conv2d(Module):
    """Bias-free convolution; a batch norm always follows it."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dtype=np.float32,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Parameter.create(he_uniform(rng, shape, fan_in, dtype), "weight")

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.value, stride=self.stride, padding=self.padding)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.relu(x)


class MaxPool2d(Module):
    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def forward(self, x: Tensor) -> Tensor:
        return T.max_pool2d(x, self.size)


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.flatten(x)


class GlobalAvgPool(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.mean(x, axis=(2, 3))


class Sequential(Module):
    def __init__(self, layers: Sequence[Module]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, index: int) -> Module:
        return self.layers[index]


class BasicBlock(Module):
    """Two 3x3 conv-BN stages with an identity or projected shortcut."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        self.shortcut: List[Module] = []
        if stride != 1 or in_channels != out_channels:
            self.shortcut = [
                Conv2d(in_channels, out_channels, 1, rng, stride=stride, dtype=dtype),
                BatchNorm2d(out_channels, dtype=dtype),
            ]

    def forward(self, x: Tensor) -> Tensor:
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        residual = x
        for layer in self.shortcut:
            residual = layer(residual)
        return T.relu(out + residual)
