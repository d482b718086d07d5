"""Implicit multi-quantile linear forecasters with shared heads."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    ChannelStandardizer,
    ChannelStats,
    SplitSpec,
    TimeSeriesDataset,
    WindowBatch,
    apply_standardizer,
    chronological_split,
    fit_standardizer,
    invert_standardizer,
    load_csv,
    make_windows,
)
from .estimator import QuantileLinearForecaster  # noqa: E402
from .loss import LossBreakdown, loss_and_grad, multitask_loss, pinball  # noqa: E402
from .model import QuantileLinearModel, forward_all_slots, init_model, param_count  # noqa: E402
from .quantile import QuantileSlots, embed_level, sample_levels  # noqa: E402
from .train import Adam, TrainConfig, TrainReport, grid_search_m, train_model  # noqa: E402

__all__ = [
    "Adam", "ChannelStandardizer", "ChannelStats", "LossBreakdown", "QuantileLinearForecaster",
    "QuantileLinearModel", "QuantileSlots", "SplitSpec", "TimeSeriesDataset", "TrainConfig",
    "TrainReport", "WindowBatch", "apply_standardizer", "chronological_split", "embed_level",
    "fit_standardizer", "forward_all_slots", "grid_search_m", "init_model", "invert_standardizer",
    "load_csv", "loss_and_grad", "make_windows", "multitask_loss", "param_count", "pinball",
    "sample_levels", "train_model",
]
