"""
Trainable parameters and the Adam optimizer.
"""
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from src.core.exceptions import ContractError
from src.numeric.tensor import Tensor, check_finite

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(eq=False)
class Parameter:
    """A trainable tensor with its Adam moment buffers."""
    value: Tensor
    name: str = ""
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self):
        self.value.requires_grad = True
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value.data)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value.data)

    @classmethod
    def create(cls, array: np.ndarray, name: str = "") -> "Parameter":
        return cls(Tensor(np.array(array, copy=True), requires_grad=True), name=name)

    @property
    def shape(self):
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = None

    def reset_state(self) -> None:
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)
        self.step_count = 0


def adam_step(
    params: Sequence[Parameter],
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """
    One bias-corrected Adam update over ``params``; gradients are zeroed afterwards.

    Raises:
        ContractError: If any parameter has no gradient (nothing is updated)
        NumericalError: If an update produces non-finite values
    """
    missing = [p.name or str(i) for i, p in enumerate(params) if p.value.grad is None]
    if missing:
        raise ContractError(f"adam_step called without gradients for: {', '.join(missing)}")

    for param in params:
        grad = param.value.grad
        param.step_count += 1
        t = param.step_count
        param.adam_m = beta1 * param.adam_m + (1.0 - beta1) * grad
        param.adam_v = beta2 * param.adam_v + (1.0 - beta2) * (grad * grad)
        m_hat = param.adam_m / (1.0 - beta1 ** t)
        v_hat = param.adam_v / (1.0 - beta2 ** t)
        updated = param.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        check_finite(updated, "adam_step")
        param.value.data[...] = updated
        param.zero_grad()


class Adam:
    """Adam over a fixed parameter list."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def reset(self) -> None:
        """Forget moment estimates and step counts."""
        for param in self.params:
            param.reset_state()
