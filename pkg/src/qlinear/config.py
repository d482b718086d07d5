"""INI-style run configuration: ``key = value`` lines under per-module sections."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SplitSpec, default_split_for
from .train import M_GRID, TrainConfig


class ConfigError(ValueError):
    pass


# section -> {key: type}; every TrainConfig field appears exactly once
SCHEMA: dict[str, dict[str, type]] = {
    "data": {
        "lookback": int,
        "horizon": int,
        "split": str,
        "lookback_bridging": bool,
        "date_column": str,
        "standardize": bool,
    },
    "model": {
        "variant": str,
        "m": int,
        "reconstruct": bool,
        "moving_average_w": int,
        "shared_embedding": bool,
        "literal_eq3": bool,
        "subsampled_trend": bool,
        "per_channel_heads": bool,
    },
    "train": {
        "batch_size": int,
        "learning_rate": float,
        "beta1": float,
        "beta2": float,
        "eps": float,
        "max_epochs": int,
        "patience": int,
        "seed": int,
    },
    "gridsearch": {"grid": str, "jobs": int},
}

_TRAIN_KEYS = set(TrainConfig.field_names())


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    split: str = ""  # empty picks 6:2:2 for ETT files, 7:1:2 otherwise
    lookback_bridging: bool = True
    date_column: str = ""
    standardize: bool = True
    grid: tuple[int, ...] = M_GRID
    jobs: int = 1

    def split_spec(self, data_path) -> SplitSpec:
        if self.split:
            return SplitSpec.parse(self.split, self.lookback_bridging)
        base = default_split_for(str(data_path))
        return SplitSpec(base.ratios, self.lookback_bridging)

    def to_text(self) -> str:
        """Render the effective configuration in the same format it is read."""
        t = self.train.resolved()
        own = {
            "split": self.split, "lookback_bridging": self.lookback_bridging,
            "date_column": self.date_column, "standardize": self.standardize,
            "grid": ",".join(str(m) for m in self.grid), "jobs": self.jobs,
        }
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                value = t[key] if key in t else own[key]
                if isinstance(value, bool):
                    value = str(value).lower()
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, **overrides) -> "RunConfig":
        train_kw = {k: v for k, v in overrides.items() if k in _TRAIN_KEYS and v is not None}
        own_kw = {k: v for k, v in overrides.items() if k not in _TRAIN_KEYS and v is not None}
        unknown = set(own_kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown override(s): {', '.join(sorted(unknown))}")
        cfg = RunConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **own_kw})
        if train_kw:
            cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                               "train": self.train.with_(**train_kw)})
        return cfg


def _convert(section: str, key: str, raw: str, kind: type):
    try:
        if kind is bool:
            value = raw.strip().lower()
            if value in ("1", "true", "yes", "on"):
                return True
            if value in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is float and section == "train" and key == "learning_rate" and raw.strip().lower() in ("", "default", "none"):
            return None
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_grid(text: str) -> tuple[int, ...]:
    try:
        grid = tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"grid must be comma-separated integers, got {text!r}") from None
    if not grid:
        raise ConfigError("grid must not be empty")
    return grid


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            values[key] = _convert(section, key, raw, SCHEMA[section][key])

    train_kw = {k: v for k, v in values.items() if k in _TRAIN_KEYS}
    try:
        train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    own = {k: v for k, v in values.items() if k not in _TRAIN_KEYS}
    if "grid" in own:
        own["grid"] = parse_grid(own["grid"])
    if own.get("split"):
        try:
            SplitSpec.parse(own["split"])
        except ValueError as exc:
            raise ConfigError(f"{source}: bad split {own['split']!r}: {exc}") from None
    return RunConfig(train=train, **own)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))
