"""Shared linear forecasting heads for the QD, QN and QL variants."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import (
    add_embedding,
    decompose,
    moving_average_matrix,
    normalize_last,
    subsample_trend,
)
from .quantile import QuantileSlots

VARIANTS = ("qd", "qn", "ql")
HEAD_NAMES = {"qd": ("trend", "season"), "qn": ("norm",), "ql": ("linear",)}

CHECKPOINT_MAGIC = "QLINEAR-CKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class LinearHead:
    """Linear map along the time axis, shared by every channel unless 3-D.

    ``weight`` is ``(in_len, out_len)`` or ``(C, in_len, out_len)`` for
    per-channel heads; ``bias`` is ``(out_len,)`` or ``(C, out_len)``.
    """

    weight: np.ndarray
    bias: np.ndarray

    @property
    def per_channel(self) -> bool:
        return self.weight.ndim == 3

    @property
    def in_len(self) -> int:
        return self.weight.shape[-2]

    @property
    def out_len(self) -> int:
        return self.weight.shape[-1]

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        """``(..., in_len, C) -> (..., out_len, C)``."""
        if inputs.shape[-2] != self.in_len:
            raise ValueError(f"head expects {self.in_len} input steps, got {inputs.shape[-2]}")
        if self.per_channel:
            if inputs.shape[-1] != self.weight.shape[0]:
                raise ValueError(
                    f"head has {self.weight.shape[0]} channel maps, input has {inputs.shape[-1]} channels"
                )
            return np.einsum("...ic,cio->...oc", inputs, self.weight) + self.bias.T
        return np.einsum("...ic,io->...oc", inputs, self.weight) + self.bias[:, None]

    def unit_response(self, shift: np.ndarray) -> np.ndarray:
        """Output change per unit of an input shift profile, ``(out_len, 1 | C)``."""
        if self.per_channel:
            return np.einsum("i,cio->oc", shift, self.weight)
        return (shift @ self.weight)[:, None]

    def size(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class QuantileLinearModel:
    """Parameters of one variant plus everything needed to run it."""

    variant: str
    lookback: int
    horizon: int
    heads: dict[str, LinearHead]
    slots: QuantileSlots
    n_channels: int
    reconstruct: bool = False
    moving_average_w: int = 25
    literal_eq3: bool = False
    subsampled_trend: bool = False
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def out_len(self) -> int:
        return self.lookback + self.horizon if self.reconstruct else self.horizon

    @property
    def per_channel_heads(self) -> bool:
        return next(iter(self.heads.values())).per_channel

    def kernel(self) -> int:
        return self.moving_average_w

    def trend_matrix(self) -> np.ndarray:
        mat = moving_average_matrix(self.lookback, self.kernel())
        if self.subsampled_trend:
            mat = subsample_trend(mat, self.kernel())
        return mat

    def copy(self) -> "QuantileLinearModel":
        heads = {k: LinearHead(h.weight.copy(), h.bias.copy()) for k, h in self.heads.items()}
        return QuantileLinearModel(
            variant=self.variant, lookback=self.lookback, horizon=self.horizon, heads=heads,
            slots=self.slots.copy(), n_channels=self.n_channels, reconstruct=self.reconstruct,
            moving_average_w=self.moving_average_w, literal_eq3=self.literal_eq3,
            subsampled_trend=self.subsampled_trend, metadata=dict(self.metadata),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat view of every learnable array, keyed by a stable name."""
        params = {}
        for name, head in self.heads.items():
            params[f"{name}.weight"] = head.weight
            params[f"{name}.bias"] = head.bias
        params["embedding.weight"] = self.slots.weights
        params["embedding.bias"] = self.slots.biases
        return params


def head_input_lengths(variant: str, lookback: int, moving_average_w: int,
                       subsampled_trend: bool) -> dict[str, int]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    lengths = {name: lookback for name in HEAD_NAMES[variant]}
    if variant == "qd" and subsampled_trend:
        lengths["trend"] = lookback // moving_average_w
    return lengths


def init_model(
    variant: str,
    lookback: int,
    horizon: int,
    m: int,
    n_channels: int,
    rng: np.random.Generator,
    reconstruct: bool = False,
    moving_average_w: int = 25,
    shared_embedding: bool = False,
    literal_eq3: bool = False,
    subsampled_trend: bool = False,
    per_channel_heads: bool = False,
) -> QuantileLinearModel:
    """Weights uniform in ``[-1/sqrt(in_len), 1/sqrt(in_len)]``, biases zero."""
    variant = variant.lower()
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    if variant == "qd" and not 1 <= moving_average_w <= lookback:
        raise ValueError(f"moving-average kernel {moving_average_w} must lie in [1, {lookback}]")
    out_len = lookback + horizon if reconstruct else horizon
    heads = {}
    for name, in_len in head_input_lengths(variant, lookback, moving_average_w, subsampled_trend).items():
        if in_len < 1:
            raise ValueError(f"{name} head would have no inputs (lookback {lookback}, kernel {moving_average_w})")
        k = 1.0 / np.sqrt(in_len)
        if per_channel_heads:
            weight = rng.uniform(-k, k, size=(n_channels, in_len, out_len))
            bias = np.zeros((n_channels, out_len))
        else:
            weight = rng.uniform(-k, k, size=(in_len, out_len))
            bias = np.zeros(out_len)
        heads[name] = LinearHead(weight, bias)
    return QuantileLinearModel(
        variant=variant, lookback=lookback, horizon=horizon, heads=heads,
        slots=QuantileSlots.create(m, shared=shared_embedding), n_channels=n_channels,
        reconstruct=reconstruct, moving_average_w=moving_average_w, literal_eq3=literal_eq3,
        subsampled_trend=subsampled_trend,
    )


def _check_input(x: np.ndarray, model: QuantileLinearModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-2] != model.lookback:
        raise ValueError(
            f"expected input of shape (..., {model.lookback}, C), got {x.shape}"
        )
    if model.per_channel_heads and x.shape[-1] != model.n_channels:
        raise ValueError(f"model has {model.n_channels} channels, input has {x.shape[-1]}")
    return x


# Literal per-slot forward passes ------------------------------------------------

def forward_qd(trend, season, model: QuantileLinearModel) -> np.ndarray:
    return model.heads["trend"](trend) + model.heads["season"](season)


def forward_qn(normed, last, model: QuantileLinearModel) -> np.ndarray:
    return model.heads["norm"](normed) + last


def forward_ql(z, model: QuantileLinearModel) -> np.ndarray:
    return model.heads["linear"](z)


def forward_slot(x, embedded: float, model: QuantileLinearModel) -> np.ndarray:
    """Embed, preprocess and forecast for one embedded quantile value."""
    x = _check_input(x, model)
    z = add_embedding(x, embedded)
    if model.variant == "qd":
        trend, season = decompose(z, model.kernel())
        if model.subsampled_trend:
            trend = subsample_trend(trend, model.kernel())
        return forward_qd(trend, season, model)
    if model.variant == "qn":
        if model.literal_eq3:
            last = x[..., -1:, :]
            return forward_qn(z - last, last, model)
        normed, last = normalize_last(z)
        return forward_qn(normed, last, model)
    return forward_ql(z, model)


def forward_all_slots(x, model: QuantileLinearModel) -> list[np.ndarray]:
    """One forecast per slot, every slot going through the same heads."""
    return [forward_slot(x, e, model) for e in model.slots.embedded]


def predict_level(x, model: QuantileLinearModel, level: float = 0.5, slot: int = 0) -> np.ndarray:
    return forward_slot(x, model.slots.embed(level, slot), model)


# Affine decomposition used by training ------------------------------------------
#
# Every variant is affine in the embedded scalar a:
#   forecast(x, a) = base(x) + a * response
# so M slot forecasts cost one head evaluation plus a rank-one update.

def head_features(x: np.ndarray, model: QuantileLinearModel) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Head inputs at zero embedding and the additive output offset, if any."""
    if model.variant == "qd":
        trend_mat = model.trend_matrix()
        ma = moving_average_matrix(model.lookback, model.kernel())
        trend = np.einsum("st,btc->bsc", trend_mat, x)
        season = x - np.einsum("st,btc->bsc", ma, x)
        return {"trend": trend, "season": season}, None
    if model.variant == "qn":
        last = x[:, -1:, :]
        return {"norm": x - last}, last
    return {"linear": x}, None


def shift_profiles(model: QuantileLinearModel) -> tuple[dict[str, np.ndarray], float]:
    """Change of each head input, and of the offset, per unit embedded value."""
    lb = model.lookback
    if model.variant == "qd":
        # moving-average rows sum to one, so a constant shift passes to the trend intact
        return {"trend": model.trend_matrix().sum(axis=1), "season": np.zeros(lb)}, 0.0
    if model.variant == "qn":
        if model.literal_eq3:
            return {"norm": np.ones(lb)}, 0.0
        return {"norm": np.zeros(lb)}, 1.0
    return {"linear": np.ones(lb)}, 0.0


def unit_response(model: QuantileLinearModel) -> np.ndarray:
    """``d forecast / d embedded``, shape ``(out_len, 1)`` or ``(out_len, C)``."""
    shifts, offset = shift_profiles(model)
    resp = sum(model.heads[name].unit_response(s) for name, s in shifts.items())
    return resp + offset


def base_forecast(x: np.ndarray, model: QuantileLinearModel):
    feats, offset = head_features(x, model)
    out = sum(model.heads[name](f) for name, f in feats.items())
    if offset is not None:
        out = out + offset
    return out, feats


def param_count(model: QuantileLinearModel) -> int:
    return sum(h.size() for h in model.heads.values()) + model.slots.n_params()


# Checkpoints --------------------------------------------------------------------

def save_checkpoint(model: QuantileLinearModel, path, stats_ref: str = "", config_text: str = "") -> None:
    """Write an uncompressed ``.npz`` container, atomically."""
    arrays = {
        "magic": np.array(CHECKPOINT_MAGIC),
        "format_version": np.array(CHECKPOINT_VERSION),
        "variant": np.array(model.variant),
        "lookback": np.array(model.lookback),
        "horizon": np.array(model.horizon),
        "m": np.array(model.slots.m),
        "n_channels": np.array(model.n_channels),
        "reconstruct": np.array(model.reconstruct),
        "moving_average_w": np.array(model.moving_average_w),
        "shared_embedding": np.array(model.slots.shared),
        "literal_eq3": np.array(model.literal_eq3),
        "subsampled_trend": np.array(model.subsampled_trend),
        "stats_ref": np.array(stats_ref),
        "config": np.array(config_text),
    }
    for key, value in model.parameters().items():
        arrays[f"param.{key}"] = np.ascontiguousarray(value)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_checkpoint(path) -> QuantileLinearModel:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        npz = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    with npz as data:
        if "magic" not in data or str(data["magic"]) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic string")
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
            )
        variant = str(data["variant"])
        heads = {
            name: LinearHead(data[f"param.{name}.weight"].copy(), data[f"param.{name}.bias"].copy())
            for name in HEAD_NAMES[variant]
        }
        m = int(data["m"])
        slots = QuantileSlots.create(m, shared=bool(data["shared_embedding"]))
        slots.weights[:] = data["param.embedding.weight"]
        slots.biases[:] = data["param.embedding.bias"]
        return QuantileLinearModel(
            variant=variant,
            lookback=int(data["lookback"]),
            horizon=int(data["horizon"]),
            heads=heads,
            slots=slots,
            n_channels=int(data["n_channels"]),
            reconstruct=bool(data["reconstruct"]),
            moving_average_w=int(data["moving_average_w"]),
            literal_eq3=bool(data["literal_eq3"]),
            subsampled_trend=bool(data["subsampled_trend"]),
            metadata={"stats_ref": str(data["stats_ref"]), "config": str(data["config"])},
        )
