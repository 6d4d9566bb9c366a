from typing import Callable

import numpy as np

from app.autodiff.tensor import Tape, Tensor

ScalarFn = Callable[[Tensor], Tensor]


def analytic_gradient(f: ScalarFn, x: Tensor) -> np.ndarray:
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        y = f(x)
    tape.backward(y)
    grad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()
    return grad


def numerical_gradient(f: ScalarFn, x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences, one element at a time; ``x.data`` is restored afterwards."""
    grad = np.zeros_like(x.data)
    for idx in np.ndindex(x.shape):
        original = x.data[idx]
        x.data[idx] = original + h
        f_plus = f(x).item()
        x.data[idx] = original - h
        f_minus = f(x).item()
        x.data[idx] = original
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def finite_diff_check(f: ScalarFn, x: Tensor, h: float = 1e-4) -> float:
    """
    Max over elements of ``|analytic - numeric| / (|numeric| + 1e-8)``.

    Hard thresholds inside ``f`` are constants for the analytic pass, so the check
    covers the value path only.
    """
    analytic = analytic_gradient(f, x)
    numeric = numerical_gradient(f, x, h)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
