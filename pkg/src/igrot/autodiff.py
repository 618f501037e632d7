"""Dense-tensor compute core with reverse-mode gradient accumulation.

Tensors are float64 numpy arrays of rank <= 3 (batch x tokens x dim is the
largest shape the networks need).  Operations executed while a :class:`Tape`
is active are recorded; ``backward`` replays the records in exact reverse
order and accumulates adjoints into every ``requires_grad`` tensor reached.
Without an active tape the same functions run as plain forward math.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ValidationError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_local = threading.local()

# When True every op asserts its output is finite (slow; used by tests).
FINITE_CHECKS = False


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ValidationError(f"rank {arr.ndim} tensor; only rank <= 3 supported")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"<{tag} shape={self.data.shape} grad={'yes' if self.requires_grad else 'no'}>"


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of operations; replayed in reverse by ``backward``."""

    _records: list[_Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad tensor's grad."""
        if loss.data.shape != ():
            raise ValidationError(f"backward requires a scalar loss, got {loss.data.shape}")
        if not self._records:
            raise ValidationError("backward on an empty tape")
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones(())}
        touched: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self._records):
            out_adj = adjoint.get(id(rec.output))
            if out_adj is None:
                continue
            for tensor, grad in zip(rec.inputs, rec.backward(out_adj)):
                if grad is None:
                    continue
                key = id(tensor)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + grad
                else:
                    adjoint[key] = grad
                    touched[key] = tensor
        for key, tensor in touched.items():
            if tensor.requires_grad:
                g = adjoint[key]
                tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the tape that recorded it."""
    if loss._tape is None:
        raise ValidationError("loss was not recorded on a tape")
    loss._tape.backward(loss)


def _emit(
    data: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    if FINITE_CHECKS and not np.isfinite(data).all():
        raise ValidationError("non-finite value produced by an operation")
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = current_tape()
    if tape is not None and out.requires_grad:
        tape._records.append(_Record(out, inputs, backward_fn))
        out._tape = tape
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _as_operands(x: Tensor, y) -> tuple[Tensor, np.ndarray | float, bool]:
    """Split a binary op's second argument into tensor vs plain scalar."""
    if isinstance(y, Tensor):
        return y, y.data, True
    return x, float(y), False  # placeholder tensor unused when scalar


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(x: Tensor, y) -> Tensor:
    yt, yv, is_tensor = _as_operands(x, y)
    data = x.data + yv
    if not is_tensor:
        return _emit(data, (x,), lambda g: (_unbroadcast(g, x.shape),))
    return _emit(
        data,
        (x, yt),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, yt.shape)),
    )


def sub(x: Tensor, y) -> Tensor:
    yt, yv, is_tensor = _as_operands(x, y)
    data = x.data - yv
    if not is_tensor:
        return _emit(data, (x,), lambda g: (_unbroadcast(g, x.shape),))
    return _emit(
        data,
        (x, yt),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, yt.shape)),
    )


def mul(x: Tensor, y) -> Tensor:
    yt, yv, is_tensor = _as_operands(x, y)
    data = x.data * yv
    if not is_tensor:
        return _emit(data, (x,), lambda g: (_unbroadcast(g * yv, x.shape),))
    xv = x.data
    return _emit(
        data,
        (x, yt),
        lambda g: (_unbroadcast(g * yv, x.shape), _unbroadcast(g * xv, yt.shape)),
    )


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(x.data * s, (x,), lambda g: (g * s,))


def div(x: Tensor, y) -> Tensor:
    yt, yv, is_tensor = _as_operands(x, y)
    data = x.data / yv
    if not is_tensor:
        return _emit(data, (x,), lambda g: (_unbroadcast(g / yv, x.shape),))
    xv = x.data
    return _emit(
        data,
        (x, yt),
        lambda g: (
            _unbroadcast(g / yv, x.shape),
            _unbroadcast(-g * xv / (yv * yv), yt.shape),
        ),
    )


def sqrt(x: Tensor) -> Tensor:
    root = np.sqrt(x.data)
    return _emit(root, (x,), lambda g: (g * (0.5 / root),))


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU x * Phi(x) with Phi the standard normal CDF."""
    xv = x.data
    cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)
    return _emit(xv * cdf, (x,), lambda g: (g * (cdf + xv * pdf),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale}
_UNARY = {"sigmoid": sigmoid, "gelu": gelu}


def elementwise(kind: str, x: Tensor, y=None) -> Tensor:
    """Dispatch by kind; binary kinds need y (tensor or scalar), unary reject it."""
    if kind in _UNARY:
        if y is not None:
            raise ValidationError(f"{kind} takes a single operand")
        return _UNARY[kind](x)
    if kind in _ELEMENTWISE:
        if y is None:
            raise ValidationError(f"{kind} needs a second operand")
        return _ELEMENTWISE[kind](x, y)
    raise ValidationError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValidationError("matmul operands must be rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValidationError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    if a.data.ndim == 3 and b.data.ndim == 3 and a.shape[0] != b.shape[0]:
        if a.shape[0] != 1 and b.shape[0] != 1:
            raise ValidationError(f"matmul batch dims disagree: {a.shape} x {b.shape}")
    av, bv = a.data, b.data

    def back(g: np.ndarray):
        da = _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape)
        db = _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape)
        return da, db

    return _emit(av @ bv, (a, b), back)


def transpose_last2(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise ValidationError("transpose_last2 needs rank >= 2")
    return _emit(
        np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _emit(np.ascontiguousarray(x.data[..., start:stop]), (x,), back)


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def back(g: np.ndarray):
        return tuple(g[..., offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _emit(
        np.concatenate([p.data for p in parts], axis=-1), tuple(parts), back
    )


def take_token(x: Tensor, index: int) -> Tensor:
    """Select one token from a (B, T, D) sequence, yielding (B, D)."""
    if x.data.ndim != 3:
        raise ValidationError("take_token expects a rank-3 tensor")

    def back(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, index, :] = g
        return (full,)

    return _emit(x.data[:, index, :].copy(), (x,), back)


def take_diag(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValidationError("take_diag expects a square matrix")

    def back(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.fill_diagonal(full, g)
        return (full,)

    return _emit(np.diagonal(x.data).copy(), (x,), back)


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------


def sum_lastdim(x: Tensor, keepdims: bool = False) -> Tensor:
    def back(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, -1)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit(x.data.sum(axis=-1, keepdims=keepdims), (x,), back)


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    ndim = x.data.ndim
    if not (-ndim <= axis < ndim):
        raise ValidationError(f"axis {axis} invalid for rank-{ndim} tensor")
    axis = axis % ndim
    n = x.shape[axis]

    def back(g: np.ndarray):
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _emit(x.data.mean(axis=axis), (x,), back)


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g: np.ndarray):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _emit(y, (x,), back)


def logsumexp_lastdim(x: Tensor) -> Tensor:
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (m + np.log(s)).squeeze(-1)
    soft = e / s

    def back(g: np.ndarray):
        return (np.expand_dims(g, -1) * soft,)

    return _emit(out, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    if x.shape[-1] < 2:
        raise ValidationError("layer_norm needs a last dimension >= 2")
    if eps <= 0:
        raise ValidationError("layer_norm eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gamma.data * xhat + beta.data

    def back(g: np.ndarray):
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _emit(out, (x, gamma, beta), back)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

_REL_FLOOR = 1e-3  # treats tiny gradients as absolute comparisons


@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass(frozen=True)
class GradCheckReport:
    entries: list[GradCheckEntry]
    eps: float
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max(e.max_rel_err for e in self.entries)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f against central differences.

    Only inputs with requires_grad are checked.  Relative error uses a
    denominator floor so that near-zero gradients are compared absolutely.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValidationError("eps must lie in (0, 1e-3]")
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)  # reshape below must be a view
        t.zero_grad()
    with Tape() as tape:
        out = f(*inputs)
    if out.data.shape != ():
        raise ValidationError("grad_check requires a scalar-valued function")
    tape.backward(out)

    entries: list[GradCheckEntry] = []
    for idx, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f(*inputs).data)
            flat[j] = orig - eps
            lo = float(f(*inputs).data)
            flat[j] = orig
            num_flat[j] = (hi - lo) / (2.0 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _REL_FLOOR)
        rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
        entries.append(
            GradCheckEntry(t.name or f"input{idx}", rel, rel <= tol)
        )
    return GradCheckReport(entries, eps, tol)
