"""Input transforms applied after the quantile embedding is added.

All functions treat axis -2 as time and axis -1 as channels, so they accept a
single ``(lookback, C)`` window or a ``(B, lookback, C)`` batch.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def add_embedding(x, embedded):
    return np.asarray(x, dtype=np.float64) + embedded


def _check_kernel(length: int, w: int) -> None:
    if not 1 <= w <= length:
        raise ValueError(f"moving-average kernel {w} must lie in [1, {length}]")


def moving_average(z, w: int) -> np.ndarray:
    """Same-length moving average with replicate padding.

    The first row is repeated ``(w - 1) // 2`` times in front and the last row
    ``w // 2`` times behind, so even kernels lean towards the past.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_kernel(z.shape[-2], w)
    if w == 1:
        return z.copy()
    front, back = (w - 1) // 2, w // 2
    pad = [(0, 0)] * z.ndim
    pad[-2] = (front, back)
    padded = np.pad(z, pad, mode="edge")
    return sliding_window_view(padded, w, axis=-2).mean(axis=-1)


@lru_cache(maxsize=32)
def moving_average_matrix(length: int, w: int) -> np.ndarray:
    """``A`` with ``moving_average(z, w) == A @ z`` for a ``(length, C)`` input."""
    mat = moving_average(np.eye(length), w)
    mat.setflags(write=False)
    return mat


def decompose(z, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Split into ``(trend, season)`` with ``season = z - trend``."""
    z = np.asarray(z, dtype=np.float64)
    trend = moving_average(z, w)
    return trend, z - trend


def subsample_trend(trend: np.ndarray, w: int) -> np.ndarray:
    """Keep every ``w``-th trend step, ``lookback // w`` rows in total."""
    n = trend.shape[-2] // w
    return trend[..., : n * w : w, :]


def normalize_last(z) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the final row of each window; return ``(normed, last)``.

    ``last`` keeps a singleton time axis so that ``normed + last`` broadcasts.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-2] < 1:
        raise ValueError("window must contain at least one timestep")
    last = z[..., -1:, :].copy()
    return z - last, last
