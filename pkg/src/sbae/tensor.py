"""Dense tensors with reverse-mode automatic differentiation, and the Adam optimizer.

Storage is a numpy array. Every differentiable op records its inputs and a
closure mapping the output gradient to input gradients; ``Tensor.backward``
walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from typing import Any, Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import NumericError, ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _State:
    dtype: type = np.float32
    grad_enabled: bool = True
    debug: bool = False


_state = _State()


def get_default_dtype() -> np.dtype:
    return np.dtype(_state.dtype)


def set_default_dtype(dtype: Any) -> None:
    resolved = np.dtype(dtype)
    if resolved not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {resolved}; use float32 or float64")
    _state.dtype = resolved.type


@contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Temporarily switch the dtype new tensors are created with."""
    previous = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def debug_checks(enabled: bool = True) -> Iterator[None]:
    """Raise ``NumericError`` as soon as any op produces NaN or Inf."""
    previous = _state.debug
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = previous


class Tensor:
    """N-dimensional array that records the ops producing it."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=dtype or _state.dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            logger.debug("backward() on a tensor that does not require grad")
            return

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                node._accumulate(node_grad)
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    # arithmetic -------------------------------------------------------------

    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: Any) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis, keepdims)


class Parameter(Tensor):
    """Trainable tensor with its Adam state.

    Gradient and moment buffers are allocated on first use, so shape-only
    parameters (see ``meta_array``) cost no memory.
    """

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, data: Any, name: str = "") -> None:
        super().__init__(data, requires_grad=True)
        self.name = name
        self.adam_m: Optional[np.ndarray] = None
        self.adam_v: Optional[np.ndarray] = None
        self.step_count = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def gradient(self) -> np.ndarray:
        """Current gradient; zeros when nothing has been accumulated yet."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)


def meta_array(shape: Sequence[int], dtype: Any = None) -> np.ndarray:
    """Read-only zero array of ``shape`` backed by a single element."""
    return np.broadcast_to(np.zeros((), dtype=dtype or _state.dtype), tuple(shape))


# =============================================================================
# Graph plumbing
# =============================================================================


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    track = _state.grad_enabled and any(parent.requires_grad for parent in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    if _state.debug and not np.isfinite(data).all():
        raise NumericError(f"non-finite output from {op}")
    return out


def as_tensor(value: Any, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype if like is not None else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# =============================================================================
# Elementwise and shape ops
# =============================================================================


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), backward, "div")


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.transpose(inverse),)

    return _result(x.data.transpose(axes), (x,), backward, "transpose")


def getitem(x: Tensor, index: Any) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(x.data[index]), (x,), backward, "getitem")


def tensor_sum(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def tensor_mean(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tensor_sum(x, axis, keepdims) * (1.0 / count)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient rows scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range for table of shape {table.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), backward, "embedding")


# =============================================================================
# Differentiable layers
# =============================================================================


def matmul(a: Any, b: Any) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from exc

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        grad_b = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return grad_a, grad_b

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    y = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis with population variance, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layernorm parameters {gamma.shape}/{beta.shape} do not match input {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g_normed = g * gamma.data
        grad_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, _unbroadcast(g * normed, gamma.shape), _unbroadcast(g, beta.shape)

    return _result(normed * gamma.data + beta.data, (x, gamma, beta), backward, "layernorm")


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = ndtr(x.data).astype(x.dtype, copy=False)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), backward, "gelu")


def cross_entropy(
    logits: Tensor,
    targets: Any,
    ignore_id: int = -100,
    reduction: str = "mean",
) -> Tensor:
    """Negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` is ``[..., V]`` and ``targets`` has the leading shape.
    Positions whose target equals ``ignore_id`` contribute nothing.
    ``reduction`` is "mean" over counted positions or "sum".
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    target = np.asarray(targets, dtype=np.int64).reshape(-1)
    if target.shape[0] != flat.shape[0]:
        raise ShapeError(f"cross_entropy targets {np.shape(targets)} do not match logits {logits.shape}")
    counted = target != ignore_id
    count = int(counted.sum())
    if count == 0:
        raise NumericError("no loss positions")
    if target[counted].min() < 0 or target[counted].max() >= vocab:
        raise ShapeError(f"cross_entropy target id out of range for V={vocab}")
    safe = np.where(counted, target, 0)
    rows = np.arange(flat.shape[0])

    shifted = flat - flat.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    picked = log_probs[rows, safe]
    total = -(picked * counted).sum()
    scale = 1.0 / count if reduction == "mean" else 1.0
    value = np.asarray(total * scale, dtype=logits.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, safe] -= 1.0
        grad *= counted[:, None]
        grad *= g * scale
        return (grad.reshape(logits.shape).astype(logits.dtype, copy=False),)

    return _result(value, (logits,), backward, "cross_entropy")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Zero each element with probability ``p`` and rescale survivors; identity outside training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    scale = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * scale,)

    return _result(x.data * scale, (x,), backward, "dropout")


# =============================================================================
# Optimization
# =============================================================================


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterwards."""
    for param in params:
        grad = param.gradient()
        if param.adam_m is None or param.adam_v is None:
            param.adam_m = np.zeros_like(param.data)
            param.adam_v = np.zeros_like(param.data)
        param.step_count += 1
        param.adam_m *= beta1
        param.adam_m += (1.0 - beta1) * grad
        param.adam_v *= beta2
        param.adam_v += (1.0 - beta2) * grad * grad
        m_hat = param.adam_m / (1.0 - beta1**param.step_count)
        v_hat = param.adam_v / (1.0 - beta2**param.step_count)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if param.grad is None:
            param.grad = np.zeros_like(param.data)
        else:
            param.grad.fill(0)


# =============================================================================
# Verification helpers
# =============================================================================


def numerical_gradient(
    fn: Callable[[], Tensor],
    array: np.ndarray,
    eps: float = 1e-4,
    indices: Optional[Iterable[tuple[int, ...]]] = None,
) -> dict[tuple[int, ...], float]:
    """Central finite differences of the scalar ``fn()`` with respect to entries of ``array``.

    ``array`` is perturbed in place and restored. ``indices`` limits the
    entries perturbed; all of them by default.
    """
    positions = list(indices) if indices is not None else list(np.ndindex(array.shape))
    estimates: dict[tuple[int, ...], float] = {}
    with no_grad():
        for index in positions:
            original = array[index]
            array[index] = original + eps
            upper = fn().item()
            array[index] = original - eps
            lower = fn().item()
            array[index] = original
            estimates[index] = (upper - lower) / (2.0 * eps)
    return estimates


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a|| + ||n||, tiny)``; 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
