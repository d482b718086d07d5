"""Test-time metrics, quantile diagnostics and the Repeat baseline."""

from __future__ import annotations

import numpy as np

from .loss import pinball
from .model import QuantileLinearModel, predict_level


def _pair(targets, forecasts):
    y = np.asarray(targets, dtype=np.float64)
    f = np.asarray(forecasts, dtype=np.float64)
    if y.shape != f.shape:
        raise ValueError(f"shape mismatch: targets {y.shape}, forecasts {f.shape}")
    return y, f


def mae(targets, forecasts) -> float:
    y, f = _pair(targets, forecasts)
    return float(np.mean(np.abs(y - f)))


def mse(targets, forecasts) -> float:
    y, f = _pair(targets, forecasts)
    return float(np.mean((y - f) ** 2))


def coverage(targets, forecasts) -> float:
    """Fraction of targets at or below the quantile forecast."""
    y, f = _pair(targets, forecasts)
    return float(np.mean(y <= f))


def mean_pinball(targets, forecasts, level: float) -> float:
    y, f = _pair(targets, forecasts)
    return float(np.mean(pinball(y, f, level)))


def forecast_part(pred: np.ndarray, model: QuantileLinearModel) -> np.ndarray:
    """Drop reconstruction steps, keeping the last ``horizon`` outputs."""
    return pred[..., -model.horizon:, :] if model.reconstruct else pred


def quantile_forecasts(inputs, model: QuantileLinearModel, levels) -> dict[float, np.ndarray]:
    """Forecast steps for each requested level via the slot-0 embedding."""
    out = {}
    for level in levels:
        if not 0 < level < 1:
            raise ValueError(f"quantile level {level} outside (0, 1)")
        out[float(level)] = forecast_part(predict_level(inputs, model, level), model)
    return out


def per_level_pinball(inputs, targets, model: QuantileLinearModel, levels) -> dict[float, float]:
    """Mean pinball loss at each level.

    Only levels the model was trained to answer are meaningful; see
    :func:`levels_are_extrapolated`.
    """
    preds = quantile_forecasts(inputs, model, levels)
    return {lv: mean_pinball(targets, p, lv) for lv, p in preds.items()}


def levels_are_extrapolated(model: QuantileLinearModel) -> bool:
    """True when arbitrary levels go through per-slot parameters trained only at the median."""
    return not model.slots.shared


def crossing_rate(lower_forecasts, upper_forecasts) -> float:
    """Fraction of elements where the lower-level forecast exceeds the upper one."""
    lo, hi = _pair(lower_forecasts, upper_forecasts)
    return float(np.mean(lo > hi))


def repeat_baseline(x, horizon: int) -> np.ndarray:
    """Repeat the last observed row ``horizon`` times."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] < 1:
        raise ValueError("input window must contain at least one step")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    reps = [1] * x.ndim
    reps[-2] = horizon
    return np.tile(x[..., -1:, :], reps)


REPORT_COLUMNS = ("dataset", "split", "model", "lookback", "horizon", "m", "mae", "mse", "params", "seed")


def report_row(**values) -> str:
    """One tab-separated MetricsReport row in ``REPORT_COLUMNS`` order."""
    cells = []
    for col in REPORT_COLUMNS:
        v = values[col]
        cells.append(repr(v) if isinstance(v, float) else str(v))
    return "\t".join(cells)


def report_header() -> str:
    return "\t".join(REPORT_COLUMNS)
