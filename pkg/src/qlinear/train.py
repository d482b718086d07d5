"""Adam optimisation, early stopping and the grid search over slot counts."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import TimeSeriesDataset, all_windows, gather_windows, window_starts
from .loss import loss_and_grad
from .metrics import forecast_part
from .model import VARIANTS, QuantileLinearModel, init_model, predict_level
from .quantile import sample_levels

log = logging.getLogger(__name__)

M_GRID = (1, 2, 4, 6, 8, 16, 32, 64, 128, 256, 512, 1024)
DEFAULT_LR = {"qd": 0.005, "ql": 0.005, "qn": 0.001}


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "qn"
    lookback: int = 336
    horizon: int = 96
    m: int = 1
    reconstruct: bool = False
    batch_size: int = 32
    learning_rate: float | None = None  # None picks the per-variant default
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    seed: int = 2021
    moving_average_w: int = 25
    shared_embedding: bool = False
    literal_eq3: bool = False
    subsampled_trend: bool = False
    per_channel_heads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", self.variant.lower())
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("lookback", "horizon", "m", "batch_size", "max_epochs", "moving_average_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or not self.eps > 0:
            raise ValueError("Adam needs betas in [0, 1) and eps > 0")

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LR[self.variant]

    def resolved(self) -> dict:
        d = asdict(self)
        d["learning_rate"] = self.lr
        return d

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_step(params, grads, optimizer: Adam):
    optimizer.step(params, grads)
    return params, optimizer


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    elapsed: float


@dataclass
class TrainReport:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = float("inf")
    wall_clock: float = 0.0
    checkpoint: str = ""

    def to_text(self, include_timing: bool = True, include_config: bool = True) -> str:
        lines = [f"# {k} = {v}" for k, v in self.config.items()] if include_config else []
        lines.append(f"# best_epoch = {self.best_epoch}")
        lines.append(f"# best_val_mae = {self.best_val_mae!r}")
        if include_timing:
            lines.append(f"# wall_clock = {self.wall_clock:.3f}")
        if self.checkpoint:
            lines.append(f"# checkpoint = {self.checkpoint}")
        lines.append("epoch\ttrain_loss\tval_mae" + ("\telapsed" if include_timing else ""))
        for r in self.epochs:
            row = f"{r.epoch}\t{r.train_loss!r}\t{r.val_mae!r}"
            lines.append(row + (f"\t{r.elapsed:.3f}" if include_timing else ""))
        return "\n".join(lines) + "\n"


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for weight init, level sampling and shuffling."""
    init_ss, level_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(level_ss),
            np.random.default_rng(shuffle_ss))


def build_model(config: TrainConfig, n_channels: int, rng: np.random.Generator) -> QuantileLinearModel:
    return init_model(
        config.variant, config.lookback, config.horizon, config.m, n_channels, rng,
        reconstruct=config.reconstruct, moving_average_w=config.moving_average_w,
        shared_embedding=config.shared_embedding, literal_eq3=config.literal_eq3,
        subsampled_trend=config.subsampled_trend, per_channel_heads=config.per_channel_heads,
    )


def median_errors(model: QuantileLinearModel, ds: TimeSeriesDataset, batch_size: int = 1024) -> tuple[float, float]:
    """Median-level (MAE, MSE) over every window of ``ds``, forecast steps only."""
    starts = window_starts(ds, model.lookback, model.horizon)
    abs_sum = sq_sum = 0.0
    count = 0
    for i in range(0, len(starts), batch_size):
        batch = gather_windows(ds, starts[i:i + batch_size], model.lookback, model.horizon)
        err = batch.targets - forecast_part(predict_level(batch.inputs, model, 0.5), model)
        abs_sum += float(np.abs(err).sum())
        sq_sum += float((err * err).sum())
        count += err.size
    return abs_sum / count, sq_sum / count


def evaluate_median_mae(model: QuantileLinearModel, ds: TimeSeriesDataset, batch_size: int = 1024) -> float:
    return median_errors(model, ds, batch_size)[0]


def train_model(
    config: TrainConfig,
    train: TimeSeriesDataset,
    val: TimeSeriesDataset,
    callback=None,
) -> tuple[QuantileLinearModel, TrainReport]:
    """Fit with early stopping on validation median MAE; return the best model."""
    init_rng, level_rng, shuffle_rng = seed_streams(config.seed)
    model = build_model(config, train.n_channels, init_rng)
    windows = all_windows(train, config.lookback, config.horizon, reconstruct=config.reconstruct)
    if len(windows) == 0 or window_starts(val, config.lookback, config.horizon).size == 0:
        raise ValueError("empty training or validation split")

    params = model.parameters()
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    report = TrainReport(config=config.resolved())
    best = model.copy()
    since_best = 0
    t0 = time.perf_counter()
    n = len(windows)
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            sample_levels(model.slots, level_rng)
            breakdown, grads = loss_and_grad(windows.inputs[idx], windows.targets[idx], model)
            if not np.isfinite(breakdown.total):
                raise NumericalError(
                    f"non-finite loss {breakdown.total} at epoch {epoch}, batch {i // config.batch_size}"
                )
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(params, grads)
            if not all(np.isfinite(opt.v[k]).all() and np.isfinite(p).all() for k, p in params.items()):
                raise NumericalError(
                    f"non-finite optimizer state at epoch {epoch}, batch {i // config.batch_size}"
                )
            loss_sum += breakdown.total * len(idx)
        val_mae = evaluate_median_mae(model, val)
        if not np.isfinite(val_mae):
            raise NumericalError(f"non-finite validation MAE at epoch {epoch}")
        record = EpochRecord(epoch, loss_sum / n, val_mae, time.perf_counter() - t0)
        report.epochs.append(record)
        log.info("epoch %d train_loss %.6f val_mae %.6f", epoch, record.train_loss, val_mae)
        if callback is not None:
            callback(record)
        if val_mae < report.best_val_mae:
            report.best_val_mae = val_mae
            report.best_epoch = epoch
            best = model.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    report.wall_clock = time.perf_counter() - t0
    best.slots.levels[:] = 0.5
    return best, report


@dataclass
class GridResult:
    best_m: int
    reports: dict[int, TrainReport]
    models: dict[int, QuantileLinearModel]


def grid_search_m(
    base: TrainConfig,
    grid,
    train: TimeSeriesDataset,
    val: TimeSeriesDataset,
    on_result=None,
) -> GridResult:
    """Train once per slot count and keep the one with lowest validation MAE.

    Ties go to the smaller M.
    """
    grid = sorted(set(int(m) for m in grid))
    if not grid:
        raise ValueError("grid must contain at least one M value")
    reports, models = {}, {}
    for m in grid:
        model, report = train_model(base.with_(m=m), train, val)
        reports[m], models[m] = report, model
        if on_result is not None:
            on_result(m, model, report)
    best_m = min(grid, key=lambda m: (reports[m].best_val_mae, m))
    return GridResult(best_m, reports, models)
