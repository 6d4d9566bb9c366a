"""
Differentiable primitives: each computes its value with numpy and, under an active
tape, records a closure mapping the upstream gradient to input gradients.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from app.autodiff.tensor import Tape, TapeEntry, Tensor, as_tensor, current_tape
from app.core.errors import ConfigurationError, DimensionError, NumericError

logger = logging.getLogger(__name__)


def _emit(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{name} produced non-finite values")
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, requires_grad)
    tape: Optional[Tape] = current_tape()
    if requires_grad and tape is not None:
        tape.record(TapeEntry(name, out, tuple(inputs), backward))
    return out


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---- арифметика ----

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data
    return _emit("div", out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise DimensionError(f"matmul: batch extents {a.shape[:-2]} and {b.shape[:-2]} do not broadcast") from exc

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _emit("matmul", a.data @ b.data, (a, b), backward)


# ---- поэлементные ----

def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def expm1(x) -> Tensor:
    x = as_tensor(x)
    return _emit("expm1", np.expm1(x.data), (x,), lambda g: (g * np.exp(x.data),))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of a non-positive value")
    return _emit("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def prelu(x, slope) -> Tensor:
    x, slope = as_tensor(x), as_tensor(slope)
    positive = x.data >= 0
    out = np.where(positive, x.data, slope.data * x.data)

    def backward(g):
        return g * np.where(positive, 1.0, slope.data), g * np.where(positive, 0.0, x.data)

    return _emit("prelu", out, (x, slope), backward)


def clip(x, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    x = as_tensor(x)
    out = np.clip(x.data, low, high)
    inside = out == x.data
    return _emit("clip", out, (x,), lambda g: (g * inside,))


# ---- формы ----

def reshape(x, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}") from exc
    return _emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    return _emit("swapaxes", np.swapaxes(x.data, axis1, axis2), (x,),
                 lambda g: (np.swapaxes(g, axis1, axis2),))


def index(x, key) -> Tensor:
    x = as_tensor(x)

    keys = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (int, slice, type(None), type(Ellipsis))) for k in keys)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] += g
        else:
            # повторяющиеся индексы - только через add.at
            np.add.at(full, key, g)
        return (full,)

    return _emit("index", np.array(x.data[key]), (x,), backward)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _emit("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


# ---- нормировки ----

def softmax_lastdim(x, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Row softmax over the last axis. Masked-out positions (``mask == False``) are excluded
    before normalization and come out as exact zeros; a fully masked row is all zeros.
    """
    x = as_tensor(x)
    if mask is None:
        allowed = np.ones(x.shape, dtype=bool)
    else:
        allowed = np.asarray(mask, dtype=bool)
        if allowed.shape != x.shape:
            raise DimensionError(f"softmax mask shape {allowed.shape} != input shape {x.shape}")

    logits = np.where(allowed, x.data, -np.inf)
    row_max = np.max(logits, axis=-1, keepdims=True)
    empty_rows = ~np.isfinite(row_max)
    row_max = np.where(empty_rows, 0.0, row_max)
    e = np.where(allowed, np.exp(np.where(allowed, x.data, 0.0) - row_max), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    if np.any(empty_rows):
        logger.warning("softmax: %d fully masked rows set to zero", int(empty_rows.sum()))

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _emit("softmax", out, (x,), backward)


# ---- свертка ----

def conv2d_zero_pad(x, kernels, bias=None) -> Tensor:
    """
    Zero-padded cross-correlation that keeps the spatial size.

    ``x`` is ``[C_in, H, W]`` or a batch ``[B, C_in, H, W]``; ``kernels`` is
    ``[C_out, C_in, kh, kw]`` with odd ``kh`` and ``kw``. Output position ``(h, w)``
    sees ``x[h + i - kh // 2, w + j - kw // 2]`` through ``kernels[..., i, j]``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    inputs = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        inputs.append(bias)

    if kernels.ndim != 4:
        raise DimensionError(f"conv kernels must be [C_out, C_in, kh, kw], got {kernels.shape}")
    c_out, c_in, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv kernel extents must be odd, got {kh}x{kw}")
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv input must be [C, H, W] or [B, C, H, W], got {x.shape}")
    batched = x.ndim == 4
    data = x.data if batched else x.data[None]
    if data.shape[1] != c_in:
        raise DimensionError(f"conv input has {data.shape[1]} channels, kernels expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv bias must be [{c_out}], got {bias.shape}")

    _, _, height, width = data.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    k = kernels.data

    out = np.zeros((data.shape[0], c_out, height, width))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("oc,bchw->bohw", k[:, :, i, j], padded[:, :, i:i + height, j:j + width])
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        g = g if batched else g[None]
        grad_padded = np.zeros_like(padded)
        grad_k = np.zeros_like(k)
        for i in range(kh):
            for j in range(kw):
                window = padded[:, :, i:i + height, j:j + width]
                grad_k[:, :, i, j] = np.einsum("bohw,bchw->oc", g, window)
                grad_padded[:, :, i:i + height, j:j + width] += np.einsum("oc,bohw->bchw", k[:, :, i, j], g)
        grad_x = grad_padded[:, :, ph:ph + height, pw:pw + width]
        if not batched:
            grad_x = grad_x[0]
        grads = [grad_x, grad_k]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _emit("conv2d", out if batched else out[0], inputs, backward)
