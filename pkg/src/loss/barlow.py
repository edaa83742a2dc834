"""
Redundancy-reduction loss and its past-prediction distillation extension.

The cross-correlation of two embedding batches is computed from
column-standardized embeddings (population statistics), so a perfectly
invariant, decorrelated pair reaches the identity matrix exactly.
"""
from dataclasses import dataclass

import numpy as np

from src.core.exceptions import BatchSizeError, DimensionError
from src.core.types import LossBreakdown
from src.model.encoder import Predictor, predict_past
from src.numeric import tensor as T
from src.numeric.tensor import Tensor

STANDARDIZE_EPS = 1e-5
DEFAULT_LAMBDA = 0.005
DEFAULT_GAMMA = 0.5


@dataclass
class CorrelationMatrix:
    values: Tensor
    batch_size_used: int


def _check_batch(z: Tensor) -> None:
    if z.ndim != 2:
        raise DimensionError(f"Embeddings must be 2-D, got shape {z.shape}", expected=2, actual=z.ndim)
    if z.shape[0] < 2:
        raise BatchSizeError(f"Batch statistics need at least 2 rows, got {z.shape[0]}", batch_size=z.shape[0])


def standardize_columns(z: Tensor, eps: float = STANDARDIZE_EPS) -> Tensor:
    """``(z - mean) / (std + eps)`` per column, population std."""
    _check_batch(z)
    centered = z - T.mean(z, axis=0, keepdims=True)
    std = T.sqrt(T.mean(centered * centered, axis=0, keepdims=True))
    return centered / (std + eps)


def cross_correlation(za: Tensor, zb: Tensor, eps: float = STANDARDIZE_EPS) -> CorrelationMatrix:
    """``(1/n) standardize(za)^T standardize(zb)``."""
    if za.shape != zb.shape:
        raise DimensionError(f"Embedding shapes differ: {za.shape} vs {zb.shape}", expected=za.shape, actual=zb.shape)
    _check_batch(za)
    n = za.shape[0]
    product = T.matmul(T.transpose(standardize_columns(za, eps)), standardize_columns(zb, eps))
    return CorrelationMatrix(values=product / float(n), batch_size_used=n)


def barlow_twins_loss(za: Tensor, zb: Tensor, lambd: float = DEFAULT_LAMBDA) -> Tensor:
    """``sum_i (1 - C_ii)^2 + lambd * sum_{i != j} C_ij^2``."""
    c = cross_correlation(za, zb).values
    eye = np.eye(c.shape[0], dtype=c.dtype)
    diff = c - eye
    invariance = T.sum(diff * diff * eye)
    redundancy = T.sum(c * c * (1.0 - eye))
    return invariance + lambd * redundancy


def barlow_twins_breakdown(za: Tensor, zb: Tensor, lambd: float = DEFAULT_LAMBDA) -> LossBreakdown:
    """Plain redundancy-reduction objective with zero distillation terms."""
    loss = barlow_twins_loss(za, zb, lambd)
    return LossBreakdown(
        total=loss.item(), ssl_term=loss.item(), lambd=lambd, gamma=0.0, objective=loss
    )


def cassle_loss(
    za: Tensor,
    zb: Tensor,
    zbar_a: Tensor,
    zbar_b: Tensor,
    g: Predictor,
    lambd: float = DEFAULT_LAMBDA,
    gamma: float = DEFAULT_GAMMA,
) -> LossBreakdown:
    """
    ``L_BT(za, zb) + gamma * (L_BT(zbar_a, g(za)) + L_BT(zbar_b, g(zb)))``.

    ``zbar_*`` are past-model embeddings and never receive gradient.

    Raises:
        DimensionError: If any embedding width differs from the others
    """
    widths = {z.shape[1] if z.ndim == 2 else None for z in (za, zb, zbar_a, zbar_b)}
    if len(widths) != 1:
        raise DimensionError("Embedding widths differ", expected=za.shape, actual=[z.shape for z in (zb, zbar_a, zbar_b)])
    zbar_a, zbar_b = zbar_a.detach(), zbar_b.detach()

    ssl = barlow_twins_loss(za, zb, lambd)
    distill_a = barlow_twins_loss(zbar_a, predict_past(g, za), lambd)
    distill_b = barlow_twins_loss(zbar_b, predict_past(g, zb), lambd)
    total = ssl + gamma * (distill_a + distill_b)
    return LossBreakdown(
        total=total.item(),
        ssl_term=ssl.item(),
        distill_a=distill_a.item(),
        distill_b=distill_b.item(),
        lambd=lambd,
        gamma=gamma,
        objective=total,
    )
