"""Central finite-difference gradients for checking the analytic backward pass."""
from __future__ import annotations

from typing import Callable

import numpy as np

STEP = 1e-5


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, step: float = STEP,
                       indices=None) -> np.ndarray:
    """``(f(x + h) - f(x - h)) / 2h`` for each entry of ``arr``, perturbed in place.

    ``indices`` restricts the sweep to a subset of flat positions; other
    entries of the result stay zero.
    """
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over entries."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
