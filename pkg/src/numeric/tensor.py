"""
Differentiable tensor core.

A :class:`Tensor` wraps a numpy array. While a :class:`Tape` is active
(``with Tape() as tape:``), every primitive whose inputs require gradients
records a node on that tape; :func:`backward` replays the tape in reverse
execution order, which is a reverse topological order of the graph.
Outside a tape nothing is recorded and results carry no gradient.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.exceptions import BatchSizeError, ContractError, DimensionError, NumericalError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
GradFn = Callable[[np.ndarray, Tuple[bool, ...]], Tuple[Optional[np.ndarray], ...]]

_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """n-dimensional float array with an optional gradient buffer."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=dtype)
        if array.dtype.type not in _FLOAT_TYPES:
            array = array.astype(np.float64)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Arithmetic sugar over the primitives below
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


@dataclass(eq=False)
class Node:
    """One executed differentiable operation."""
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    grad_fn: GradFn


@dataclass(eq=False)
class Tape:
    """Ordered record of executed differentiable operations."""
    nodes: List[Node] = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def contains(self, tensor: Tensor) -> bool:
        node = tensor._node
        return node is not None and any(n is node for n in reversed(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()


_local = threading.local()


def _tape_stack() -> List[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    """The innermost tape of the calling thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants; python scalars take the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None and np.ndim(value) == 0 else None
    return Tensor(value, dtype=dtype)


def check_finite(array: np.ndarray, op: str) -> None:
    if not np.isfinite(array).all():
        raise NumericalError(f"Non-finite values produced by {op}", {"op": op})


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    check_finite(data, op)
    tape = active_tape()
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        node = Node(op, out, inputs, grad_fn)
        out._node = node
        tape.record(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor) -> None:
    """
    Populate gradients of every tensor reachable from ``loss``.

    Gradients accumulate into existing ``grad`` buffers, so repeated calls
    without a reset add up.

    Raises:
        ContractError: If ``loss`` is not a scalar or was not recorded on ``tape``
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.contains(loss):
        raise ContractError("Loss was not recorded on this tape")

    pending = {id(loss): np.ones_like(loss.data)}
    reached = {id(loss): loss}
    for node in reversed(tape.nodes):
        grad_out = pending.get(id(node.output))
        if grad_out is None:
            continue
        needs = tuple(t.requires_grad for t in node.inputs)
        input_grads = node.grad_fn(grad_out, needs)
        for tensor, grad, need in zip(node.inputs, input_grads, needs):
            if not need or grad is None:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + grad
            else:
                pending[key] = grad
                reached[key] = tensor

    for key, grad in pending.items():
        tensor = reached[key]
        if not tensor.requires_grad:
            continue
        check_finite(grad, "backward")
        grad = grad.astype(tensor.dtype, copy=False)
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


# Elementwise arithmetic

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _result("add", a.data + b.data, (a, b), grad_fn)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _result("sub", a.data - b.data, (a, b), grad_fn)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g, needs):
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return _result("mul", a.data * b.data, (a, b), grad_fn)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g, needs):
        return (
            _unbroadcast(g / b.data, a.shape) if needs[0] else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if needs[1] else None,
        )

    return _result("div", a.data / b.data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g, needs: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def grad_fn(g, needs):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _result("power", a.data ** exponent, (a,), grad_fn)


def sqrt(a: Tensor) -> Tensor:
    """Square root; the subgradient at 0 is taken as 0."""
    out = np.sqrt(a.data)

    def grad_fn(g, needs):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0).astype(a.dtype, copy=False),)

    return _result("sqrt", out, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = a.data > 0

    def grad_fn(g, needs):
        return (g * mask,)

    return _result("relu", np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), grad_fn)


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# Reductions and reshaping

def sum(a: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def grad_fn(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def grad_fn(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, a.shape) / count).astype(a.dtype, copy=False),)

    return _result("mean", np.mean(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _result("reshape", a.data.reshape(shape), (a,), lambda g, needs: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _result(
        "transpose",
        np.transpose(a.data, axes),
        (a,),
        lambda g, needs: (np.transpose(g, inverse),),
    )


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(a, (a.shape[0], -1))


# Linear algebra and convolution

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of ``a [m x k]`` and ``b [k x p]``.

    Raises:
        DimensionError: If either operand is not 2-D or inner dimensions differ
    """
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul needs 2-D operands", expected=2, actual=(a.ndim, b.ndim))
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.shape} x {b.shape}",
            expected=a.shape[1],
            actual=b.shape[0],
        )

    def grad_fn(g, needs):
        return (
            g @ b.data.T if needs[0] else None,
            a.data.T @ g if needs[1] else None,
        )

    return _result("matmul", a.data @ b.data, (a, b), grad_fn)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Cross-correlation of ``x [n x c x h x w]`` with ``kernels [o x c x kh x kw]``.

    Zero padding; output spatial size is ``floor((h + 2p - kh) / stride) + 1``.

    Raises:
        DimensionError: On rank or channel mismatch, or a kernel larger than the padded input
    """
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError("conv2d needs 4-D input and kernels", expected=4, actual=(x.ndim, kernels.ndim))
    n, c, h, w = x.shape
    o, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(f"conv2d channel mismatch: input {c}, kernels {kc}", expected=c, actual=kc)
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            f"Kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}",
            expected=(h + 2 * padding, w + 2 * padding),
            actual=(kh, kw),
        )

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, kernels.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def grad_fn(g, needs):
        grad_x = grad_k = None
        if needs[1]:
            grad_k = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if needs[0]:
            # n, out_h, out_w, c, kh, kw
            cols = np.tensordot(g, kernels.data, axes=([1], [0]))
            grad_padded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                        cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            grad_x = grad_padded[:, :, padding:padding + h, padding:padding + w] if padding else grad_padded
        return grad_x, grad_k

    return _result("conv2d", np.ascontiguousarray(out), (x, kernels), grad_fn)


def max_pool2d(x: Tensor, size: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max pooling over ``size x size`` windows; ties go to the first position."""
    stride = stride or size
    if x.ndim != 4:
        raise DimensionError("max_pool2d needs 4-D input", expected=4, actual=x.ndim)
    n, c, h, w = x.shape
    if size > h or size > w:
        raise DimensionError(f"Pool window {size} larger than input {h}x{w}", expected=(h, w), actual=size)
    windows = sliding_window_view(x.data, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, out_h, out_w, size * size)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def grad_fn(g, needs):
        grad = np.zeros_like(x.data)
        for position in range(size * size):
            i, j = divmod(position, size)
            grad[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += np.where(
                argmax == position, g, 0
            )
        return (grad,)

    return _result("max_pool2d", out, (x,), grad_fn)


# Normalisation and classification

@dataclass
class RunningStats:
    """Running mean / population variance tracked by a batch-norm layer."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, width: int, dtype=np.float32, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype), momentum)

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy(), self.momentum)


def batch_norm(
    x: Tensor,
    gamma_bn: Tensor,
    beta_bn: Tensor,
    eps: float = 1e-5,
    mode: str = "train",
    running_stats: Optional[RunningStats] = None,
) -> Tensor:
    """
    Batch normalisation over the rows of ``x [n x d]``.

    Train mode uses the batch mean and population variance (divisor n) and
    folds them into ``running_stats``; eval mode uses the running values.

    Raises:
        BatchSizeError: If fewer than 2 rows arrive in train mode
        DimensionError: If the affine parameters do not match ``d``
    """
    if x.ndim != 2:
        raise DimensionError("batch_norm needs a 2-D input", expected=2, actual=x.ndim)
    n, d = x.shape
    if gamma_bn.shape != (d,) or beta_bn.shape != (d,):
        raise DimensionError(
            f"batch_norm affine shapes {gamma_bn.shape}, {beta_bn.shape} do not match width {d}",
            expected=(d,),
            actual=(gamma_bn.shape, beta_bn.shape),
        )
    if mode not in ("train", "eval"):
        raise ContractError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")

    if mode == "train":
        if n < 2:
            raise BatchSizeError(f"batch_norm in train mode needs at least 2 rows, got {n}", batch_size=n)
        mu = x.data.mean(axis=0)
        var = ((x.data - mu) ** 2).mean(axis=0)
        if running_stats is not None:
            m = running_stats.momentum
            running_stats.mean[...] = (1.0 - m) * running_stats.mean + m * mu
            running_stats.var[...] = (1.0 - m) * running_stats.var + m * var
    else:
        if running_stats is None:
            raise ContractError("batch_norm in eval mode needs running statistics")
        mu = running_stats.mean.astype(x.dtype, copy=False)
        var = running_stats.var.astype(x.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * inv_std
    out = gamma_bn.data * x_hat + beta_bn.data

    def grad_fn(g, needs):
        grad_x = None
        if needs[0]:
            g_hat = g * gamma_bn.data
            if mode == "train":
                grad_x = (inv_std / n) * (
                    n * g_hat - g_hat.sum(axis=0) - x_hat * (g_hat * x_hat).sum(axis=0)
                )
            else:
                grad_x = g_hat * inv_std
        grad_gamma = (g * x_hat).sum(axis=0) if needs[1] else None
        grad_beta = g.sum(axis=0) if needs[2] else None
        return grad_x, grad_gamma, grad_beta

    return _result("batch_norm", out.astype(x.dtype, copy=False), (x, gamma_bn, beta_bn), grad_fn)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of ``logits [n x k]`` against integer ``labels``."""
    if logits.ndim != 2:
        raise DimensionError("softmax_cross_entropy needs 2-D logits", expected=2, actual=logits.ndim)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"Expected {n} labels, got {labels.shape}", expected=(n,), actual=labels.shape)
    if n == 0:
        raise ContractError("softmax_cross_entropy needs at least one row")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), labels].mean()

    def grad_fn(g, needs):
        probs = np.exp(log_probs)
        probs[np.arange(n), labels] -= 1.0
        return ((g * probs / n).astype(logits.dtype, copy=False),)

    return _result("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn)
