"""Dataset ingestion, chronological splitting, standardization and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DataError(ValueError):
    """Raised for malformed input files or inconsistent dataset requests."""


@dataclass(frozen=True)
class TimeSeriesDataset:
    """A multivariate series stored as an ``(L, C)`` float64 matrix.

    ``context`` counts leading rows borrowed from the preceding split. They can
    feed input windows but never appear in forecast targets. ``offset`` is the
    index of row 0 in the source file.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    frequency: str = ""
    dates: tuple[str, ...] | None = None
    context: int = 0
    offset: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (timesteps, channels), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain missing or non-finite entries")
        if len(self.channel_names) != values.shape[1]:
            raise DataError(
                f"{len(self.channel_names)} channel names for {values.shape[1]} channels"
            )
        if not 0 <= self.context <= values.shape[0]:
            raise DataError(f"context {self.context} outside [0, {values.shape[0]}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @classmethod
    def from_array(cls, values, channel_names: Sequence[str] | None = None, **kwargs):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if channel_names is None:
            channel_names = [f"c{i}" for i in range(values.shape[1])]
        return cls(values=values, channel_names=tuple(channel_names), **kwargs)

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "TimeSeriesDataset":
        return replace(self, values=values)


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise DataError("mean and std must have the same length")
        if np.any(~(std > 0)):
            raise DataError("standard deviations must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    def save(self, path) -> None:
        """Write as flat ``key = value`` lines, one per channel statistic."""
        names = self.channel_names or tuple(f"c{i}" for i in range(len(self.mean)))
        lines = [f"n_channels = {len(self.mean)}"]
        for i, name in enumerate(names):
            lines.append(f"channel.{i} = {name}")
            lines.append(f"mean.{i} = {float(self.mean[i])!r}")
            lines.append(f"std.{i} = {float(self.std[i])!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ChannelStats":
        entries = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            entries[key] = value
        try:
            n = int(entries["n_channels"])
            names = tuple(entries[f"channel.{i}"] for i in range(n))
            mean = [float(entries[f"mean.{i}"]) for i in range(n)]
            std = [float(entries[f"std.{i}"]) for i in range(n)]
        except KeyError as exc:
            raise DataError(f"{path}: missing key {exc.args[0]}") from None
        return cls(mean=np.array(mean), std=np.array(std), channel_names=names)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    lookback_bridging: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise DataError("exactly three split ratios are required")
        if any(r < 0 for r in self.ratios) or sum(self.ratios) <= 0:
            raise DataError(f"invalid split ratios {self.ratios}")

    def fractions(self) -> tuple[Fraction, Fraction, Fraction]:
        # decimal strings keep 0.6 == 3/5 exactly, so floor() never lands one row short
        parts = [Fraction(str(r)) for r in self.ratios]
        total = sum(parts)
        return tuple(p / total for p in parts)

    @classmethod
    def parse(cls, text: str, lookback_bridging: bool = True) -> "SplitSpec":
        """Parse ``"6:2:2"`` or ``"0.7,0.1,0.2"``."""
        sep = ":" if ":" in text else ","
        parts = tuple(float(p) for p in text.split(sep))
        return cls(ratios=parts, lookback_bridging=lookback_bridging)


# Benchmark convention: ETT files use 6:2:2, everything else 7:1:2.
ETT_SPLIT = SplitSpec((6, 2, 2))
DEFAULT_SPLIT = SplitSpec((7, 1, 2))


def default_split_for(name: str) -> SplitSpec:
    return ETT_SPLIT if Path(name).stem.upper().startswith("ETT") else DEFAULT_SPLIT


@dataclass
class WindowBatch:
    inputs: np.ndarray  # (B, lookback, C)
    targets: np.ndarray  # (B, H, C) or (B, lookback + H, C)
    window_start_indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def load_csv(path, date_column: str | None = None, frequency: str = "") -> TimeSeriesDataset:
    """Read a header-first CSV of numeric columns.

    When ``date_column`` is None, a first column that fails numeric parsing on
    the first data row is treated as the date column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    if not rows:
        raise DataError(f"{path}: no data rows")
    if len(rows) < 2:
        raise DataError(f"{path}: at least 2 data rows required, found {len(rows)}")

    date_idx = None
    if date_column is not None:
        if date_column not in header:
            raise DataError(f"{path}: date column {date_column!r} not in header")
        date_idx = header.index(date_column)
    elif header and not _is_number(rows[0][0]):
        date_idx = 0

    value_cols = [j for j in range(len(header)) if j != date_idx]
    if not value_cols:
        raise DataError(f"{path}: no numeric columns")

    values = np.empty((len(rows), len(value_cols)), dtype=np.float64)
    for i, row in enumerate(rows):
        # row 1 is the header, so data rows start at file line 2
        if len(row) != len(header):
            raise DataError(
                f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}"
            )
        for k, j in enumerate(value_cols):
            cell = row[j].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell!r} at line {i + 2}, column {header[j]!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(
                    f"{path}: missing value {cell!r} at line {i + 2}, column {header[j]!r}"
                )
            values[i, k] = v

    dates = tuple(row[date_idx] for row in rows) if date_idx is not None else None
    return TimeSeriesDataset(
        values=values,
        channel_names=tuple(header[j] for j in value_cols),
        frequency=frequency,
        dates=dates,
    )


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def split_lengths(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    f_train, f_val, _ = spec.fractions()
    n_train = math.floor(n * f_train)
    n_val = math.floor(n * f_val)
    return n_train, n_val, n - n_train - n_val


def chronological_split(
    ds: TimeSeriesDataset,
    spec: SplitSpec,
    lookback: int | None = None,
    horizon: int | None = None,
) -> tuple[TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset]:
    """Split into contiguous train/val/test parts by raw row index.

    With ``spec.lookback_bridging`` and a ``lookback``, the val and test parts
    are prefixed with the last ``lookback`` rows of whatever precedes them,
    recorded as ``context``.
    """
    n_train, n_val, n_test = split_lengths(ds.n_timesteps, spec)
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, ds.n_timesteps)]
    bridge = lookback if (spec.lookback_bridging and lookback) else 0

    parts = []
    for k, (lo, hi) in enumerate(bounds):
        ctx = min(bridge, lo) if k > 0 else 0
        start = lo - ctx
        part = replace(
            ds,
            values=ds.values[start:hi].copy(),
            dates=ds.dates[start:hi] if ds.dates is not None else None,
            context=ctx,
            offset=ds.offset + start,
        )
        if lookback is not None and horizon is not None:
            try:
                n_windows(part, lookback, horizon)
            except DataError:
                name = ("train", "val", "test")[k]
                raise DataError(
                    f"{name} split has {hi - lo} rows, too short for lookback={lookback}, "
                    f"horizon={horizon}"
                ) from None
        parts.append(part)
    return tuple(parts)


def fit_standardizer(train: TimeSeriesDataset) -> ChannelStats:
    """Per-channel mean and population std over the owned (non-context) rows."""
    values = train.values[train.context:]
    if values.shape[0] == 0:
        raise DataError("cannot fit a standardizer on an empty split")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    flat = [train.channel_names[j] for j in np.flatnonzero(~(std > 0))]
    if flat:
        raise DataError(f"zero-variance channel(s): {', '.join(flat)}")
    return ChannelStats(mean=mean, std=std, channel_names=train.channel_names)


def _check_channels(ds: TimeSeriesDataset, stats: ChannelStats) -> None:
    if ds.n_channels != stats.mean.shape[0]:
        raise DataError(
            f"channel-count mismatch: dataset has {ds.n_channels}, stats have {stats.mean.shape[0]}"
        )


def apply_standardizer(ds: TimeSeriesDataset, stats: ChannelStats) -> TimeSeriesDataset:
    _check_channels(ds, stats)
    return ds.with_values((ds.values - stats.mean) / stats.std)


def invert_standardizer(ds: TimeSeriesDataset, stats: ChannelStats) -> TimeSeriesDataset:
    _check_channels(ds, stats)
    return ds.with_values(ds.values * stats.std + stats.mean)


class ChannelStandardizer(TransformerMixin, BaseEstimator):
    """Per-channel z-scoring with population std, as a scikit-learn transformer."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.stats_ = fit_standardizer(TimeSeriesDataset.from_array(X))
        self.mean_ = self.stats_.mean
        self.scale_ = self.stats_.std
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64)
        return apply_standardizer(TimeSeriesDataset.from_array(X), self.stats_).values

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64)
        return invert_standardizer(TimeSeriesDataset.from_array(X), self.stats_).values


def n_windows(ds: TimeSeriesDataset, lookback: int, horizon: int, stride: int = 1) -> int:
    if lookback < 1 or horizon < 1 or stride < 1:
        raise DataError("lookback, horizon and stride must be >= 1")
    first = max(0, ds.context - lookback)
    span = ds.n_timesteps - first - lookback - horizon
    if span < 0:
        raise DataError(
            f"series of {ds.n_timesteps - first} rows is shorter than lookback + horizon "
            f"= {lookback + horizon}"
        )
    return span // stride + 1


def window_starts(ds: TimeSeriesDataset, lookback: int, horizon: int, stride: int = 1) -> np.ndarray:
    """Row indices (local to ``ds``) at which each input window begins."""
    count = n_windows(ds, lookback, horizon, stride)
    first = max(0, ds.context - lookback)
    return first + stride * np.arange(count)


def gather_windows(
    ds: TimeSeriesDataset,
    starts: Sequence[int],
    lookback: int,
    horizon: int,
    reconstruct: bool = False,
) -> WindowBatch:
    starts = np.asarray(starts, dtype=np.intp)
    steps = np.arange(lookback + horizon)
    block = ds.values[starts[:, None] + steps[None, :]]
    inputs = block[:, :lookback]
    targets = block if reconstruct else block[:, lookback:]
    return WindowBatch(inputs=inputs.copy(), targets=targets.copy(),
                       window_start_indices=[int(s) for s in starts])


def make_windows(
    ds: TimeSeriesDataset,
    lookback: int,
    horizon: int,
    reconstruct: bool = False,
    stride: int = 1,
    batch_size: int | None = None,
) -> Iterator[WindowBatch]:
    """Yield sliding windows in chronological order.

    ``batch_size=None`` yields a single batch holding every window.
    """
    starts = window_starts(ds, lookback, horizon, stride)
    size = len(starts) if batch_size is None else batch_size
    for i in range(0, len(starts), size):
        yield gather_windows(ds, starts[i:i + size], lookback, horizon, reconstruct)


def all_windows(ds: TimeSeriesDataset, lookback: int, horizon: int,
                reconstruct: bool = False, stride: int = 1) -> WindowBatch:
    return next(make_windows(ds, lookback, horizon, reconstruct, stride))
