"""Central-difference gradient checking helpers."""

from __future__ import annotations

from typing import Callable

import numpy as np

# Entries whose analytic and numeric magnitudes both fall below this floor
# are compared absolutely instead of relatively.
MAGNITUDE_FLOOR = 1e-4


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numeric gradient of scalar f at x, one central difference per entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    base = x.copy()
    for i in range(base.size):
        orig = base.ravel()[i]
        base.ravel()[i] = orig + h
        hi = f(base)
        base.ravel()[i] = orig - h
        lo = f(base)
        base.ravel()[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    """(max relative error over large entries, max absolute error over small ones).

    An entry counts as small when both magnitudes are below MAGNITUDE_FLOOR.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"shape mismatch: {analytic.shape} vs {numeric.shape}")
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    small = mag < MAGNITUDE_FLOOR
    diff = np.abs(analytic - numeric)
    max_rel = float((diff[~small] / mag[~small]).max()) if (~small).any() else 0.0
    max_abs = float(diff[small].max()) if small.any() else 0.0
    return max_rel, max_abs
