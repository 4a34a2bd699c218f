"""Finite-difference gradients for checking the analytic reverse passes."""
from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_grad(
    loss_fn: Callable[[np.ndarray], float],
    params: np.ndarray,
    h: float = 1e-6,
    relative: bool = False,
    index=None,
) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time.

    With ``relative`` the step for coordinate ``i`` is ``h * (1 + |x_i|)``.
    ``index`` restricts the computation to a subset of coordinates (others are 0).
    """
    x = np.array(params, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    coords = range(x.size) if index is None else np.asarray(index).ravel()
    flat = x.reshape(-1)
    for i in coords:
        step = h * (1.0 + abs(flat[i])) if relative else h
        old = flat[i]
        flat[i] = old + step
        fp = float(loss_fn(x))
        flat[i] = old - step
        fm = float(loss_fn(x))
        flat[i] = old
        grad.reshape(-1)[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, reference) -> float:
    """``max|a - b| / max|b|`` (absolute when the reference is zero)."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    err = float(np.max(np.abs(a - b))) if a.size else 0.0
    return err / scale if scale > 0 else err
