"""
Reverse-mode automatic differentiation over float64 numpy arrays.

A `Tape` records every primitive executed while it is active (``with Tape() as tape``).
Outputs remember the tape that produced them, so ``backward(loss)`` replays that tape
in reverse and accumulates gradients into the ``grad`` field of leaf tensors.
Outside of a tape primitives still compute values but record nothing, which is
how inference runs.
"""
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import ContractError

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("sgcn_active_tape", default=None)


class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.is_leaf = True
        self._tape: Optional["Tape"] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out.is_leaf = False
        out._tape = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # операторы - тонкие обертки над примитивами из ops
    def __add__(self, other):
        from app.autodiff import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from app.autodiff import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from app.autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from app.autodiff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from app.autodiff import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from app.autodiff import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from app.autodiff import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from app.autodiff import ops
        return ops.div(other, self)

    def __neg__(self):
        from app.autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from app.autodiff import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from app.autodiff import ops
        return ops.index(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from app.autodiff import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from app.autodiff import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from app.autodiff import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        from app.autodiff import ops
        return ops.swapaxes(self, axis1, axis2)

    @property
    def mT(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_flag})"


@dataclass
class TapeEntry:
    name: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of executed primitives."""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)
        entry.output._tape = self

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not self.entries:
            raise ContractError("backward() on an empty tape")

        # градиенты промежуточных тензоров живут только здесь, в листья - накапливаем
        pending = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            upstream = pending.pop(id(entry.output), None)
            if upstream is None:
                continue
            input_grads = entry.backward(upstream)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                grad = unbroadcast(np.asarray(grad, dtype=np.float64), tensor.shape)
                if tensor.is_leaf:
                    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                else:
                    key = id(tensor)
                    pending[key] = grad if key not in pending else pending[key] + grad


def current_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss was not computed under an active Tape")
    loss._tape.backward(loss)


def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added so ``grad`` matches ``to_shape``."""
    if grad.shape == tuple(to_shape):
        return grad
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(to_shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(to_shape)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
