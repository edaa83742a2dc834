"""
Central finite-difference gradient checking.
"""
from typing import Callable, List, Sequence

import numpy as np

from src.numeric.tensor import Tape, Tensor, backward


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``tensor``."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def analytic_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> List[np.ndarray]:
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.grad = None
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """
    Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor makes near-zero entries compare absolutely.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def gradient_check(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """Max relative error between backward and central differences over ``tensors``."""
    analytic = analytic_gradients(fn, tensors)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        numeric = numerical_gradient(fn, tensor, step)
        worst = max(worst, max_relative_error(grad, numeric, floor))
    return worst
