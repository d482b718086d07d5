"""scikit-learn style estimator around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import SplitSpec, TimeSeriesDataset, chronological_split
from .metrics import forecast_part
from .model import param_count, predict_level
from .train import TrainConfig, train_model


class QuantileLinearForecaster(RegressorMixin, BaseEstimator):
    """Linear direct multi-step forecaster trained on many quantile levels at once.

    ``fit`` takes a chronological ``(n_timesteps, n_channels)`` series and
    cuts it into sliding windows itself; ``predict`` takes input windows of
    shape ``(n_windows, lookback, n_channels)`` and returns median forecasts of
    shape ``(n_windows, horizon, n_channels)``.

    Parameters
    ----------
    variant : {"qn", "qd", "ql"}
        Last-value normalization, trend/season decomposition, or plain linear.
    n_quantiles : int
        Number of quantile slots M; slot 0 is always the median.
    validation_fraction : float
        Tail share of the fitting series held out for early stopping when no
        ``X_val`` is given.
    """

    def __init__(
        self,
        variant="qn",
        lookback=336,
        horizon=96,
        n_quantiles=1,
        reconstruct=False,
        batch_size=32,
        learning_rate=None,
        max_epochs=100,
        patience=10,
        moving_average_w=25,
        shared_embedding=False,
        literal_eq3=False,
        subsampled_trend=False,
        per_channel_heads=False,
        validation_fraction=0.125,
        random_state=2021,
    ):
        self.variant = variant
        self.lookback = lookback
        self.horizon = horizon
        self.n_quantiles = n_quantiles
        self.reconstruct = reconstruct
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.moving_average_w = moving_average_w
        self.shared_embedding = shared_embedding
        self.literal_eq3 = literal_eq3
        self.subsampled_trend = subsampled_trend
        self.per_channel_heads = per_channel_heads
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            variant=self.variant, lookback=self.lookback, horizon=self.horizon,
            m=self.n_quantiles, reconstruct=self.reconstruct, batch_size=self.batch_size,
            learning_rate=self.learning_rate, max_epochs=self.max_epochs, patience=self.patience,
            seed=self.random_state, moving_average_w=self.moving_average_w,
            shared_embedding=self.shared_embedding, literal_eq3=self.literal_eq3,
            subsampled_trend=self.subsampled_trend, per_channel_heads=self.per_channel_heads,
        )

    def fit(self, X, y=None, X_val=None):
        config = self._config()
        X = check_array(X, dtype=np.float64, ensure_min_samples=self.lookback + self.horizon)
        if X_val is None:
            if not 0 < self.validation_fraction < 1:
                raise ValueError("validation_fraction must lie in (0, 1)")
            spec = SplitSpec((1 - self.validation_fraction, self.validation_fraction, 0.0))
            train, val, _ = chronological_split(
                TimeSeriesDataset.from_array(X), spec, self.lookback, None
            )
        else:
            X_val = check_array(X_val, dtype=np.float64)
            if X_val.shape[1] != X.shape[1]:
                raise ValueError(f"X_val has {X_val.shape[1]} channels, X has {X.shape[1]}")
            train = TimeSeriesDataset.from_array(X)
            val = TimeSeriesDataset.from_array(np.vstack([X[-self.lookback:], X_val]),
                                               context=min(self.lookback, X.shape[0]))
        self.model_, self.report_ = train_model(config, train, val)
        self.n_features_in_ = X.shape[1]
        self.best_val_mae_ = self.report_.best_val_mae
        return self

    def _windows(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != (self.lookback, self.n_features_in_):
            raise ValueError(
                f"expected windows of shape (n, {self.lookback}, {self.n_features_in_}), got {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("input windows contain NaN or infinite values")
        return X

    def predict(self, X):
        return self.predict_quantiles(X, [0.5])[0]

    def predict_quantiles(self, X, levels):
        """Forecasts at each level, stacked to ``(len(levels), n, horizon, C)``."""
        X = self._windows(X)
        out = []
        for level in levels:
            if not 0 < level < 1:
                raise ValueError(f"quantile level {level} outside (0, 1)")
            out.append(forecast_part(predict_level(X, self.model_, level), self.model_))
        return np.stack(out)

    def score(self, X, y, sample_weight=None):
        """Negative mean absolute error of the median forecast (higher is better)."""
        y = np.asarray(y, dtype=np.float64)
        err = np.abs(self.predict(X) - y).mean(axis=(1, 2))
        return -float(np.average(err, weights=sample_weight))

    @property
    def n_params_(self) -> int:
        check_is_fitted(self, "model_")
        return param_count(self.model_)
