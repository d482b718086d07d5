"""Pinball loss, the weighted multi-quantile objective, and its gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import QuantileLinearModel, base_forecast, shift_profiles, unit_response
from .quantile import MEDIAN, QuantileSlots

# caps the (slots, B, out_len, C) temporaries built per chunk
_CHUNK_ELEMENTS = 1 << 21


def pinball(y, yhat, level):
    """Quantile loss; ties fall on the lower branch, which is zero anyway."""
    diff = np.subtract(y, yhat)
    return np.where(diff >= 0, level * diff, (level - 1.0) * diff)


def pinball_grad(y, yhat, level):
    """Subgradient in ``yhat``: ``1[y <= yhat] - level``."""
    return (np.asarray(y) <= yhat).astype(np.float64) - level


def aux_weight(m: int) -> float:
    return 0.0 if m <= 1 else 1.0 / (2.0 * (m - 1))


@dataclass
class LossBreakdown:
    total: float
    main_term: float
    aux_term: float
    per_slot: np.ndarray  # normalized, unweighted pinball sum per slot


GradientSet = dict  # parameter name -> gradient array, keys as QuantileLinearModel.parameters()


def _normalizer(targets: np.ndarray) -> float:
    # sums run over batch, channels and supervised steps, times the factor 2
    return float(targets.size) * 2.0


def multitask_loss(targets, forecasts, slots: QuantileSlots) -> LossBreakdown:
    """Median term plus auxiliary levels weighted by ``1 / (2 (M - 1))``.

    ``targets`` has shape ``(..., out_len, C)`` and ``forecasts`` holds one
    array of that shape per slot.
    """
    targets = np.asarray(targets, dtype=np.float64)
    m = slots.m
    if len(forecasts) != m:
        raise ValueError(f"{len(forecasts)} forecasts for {m} slots")
    if slots.levels[0] != MEDIAN:
        raise ValueError("slot 0 must hold the median level")
    if not np.all((slots.levels > 0) & (slots.levels < 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1); sample them first")
    norm = _normalizer(targets)
    per_slot = np.empty(m)
    for i, (yhat, level) in enumerate(zip(forecasts, slots.levels)):
        yhat = np.asarray(yhat)
        if yhat.shape != targets.shape:
            raise ValueError(f"forecast {i} has shape {yhat.shape}, targets {targets.shape}")
        per_slot[i] = pinball(targets, yhat, level).sum() / norm
    main = float(per_slot[0])
    aux = float(aux_weight(m) * per_slot[1:].sum())
    return LossBreakdown(total=main + aux, main_term=main, aux_term=aux, per_slot=per_slot)


def loss_and_grad(inputs, targets, model: QuantileLinearModel) -> tuple[LossBreakdown, GradientSet]:
    """Objective over a batch and its exact subgradient for every parameter.

    Uses the current ``model.slots`` levels; ``inputs`` is ``(B, lookback, C)``
    and ``targets`` ``(B, out_len, C)``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 3:
        raise ValueError("inputs and targets must be 3-D (batch, time, channels)")
    if y.shape != (x.shape[0], model.out_len, x.shape[2]):
        raise ValueError(
            f"targets shape {y.shape} does not match (B, {model.out_len}, {x.shape[2]})"
        )
    slots = model.slots
    m = slots.m
    if slots.levels[0] != MEDIAN:
        raise ValueError("slot 0 must hold the median level")

    base, feats = base_forecast(x, model)
    resp = unit_response(model)
    embedded = slots.embedded
    norm = _normalizer(y)
    scale = np.full(m, aux_weight(m) / norm)
    scale[0] = 1.0 / norm

    per_slot = np.empty(m)
    g_sum = np.zeros_like(base)  # sum over slots of weighted dL/dyhat
    g_slot = np.empty((m,) + resp.shape[:1] + (base.shape[2],))  # per slot, summed over batch
    chunk = max(1, _CHUNK_ELEMENTS // max(1, base.size))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        lv = slots.levels[lo:hi, None, None, None]
        yhat = base[None] + embedded[lo:hi, None, None, None] * resp[None, None]
        per_slot[lo:hi] = pinball(y[None], yhat, lv).sum(axis=(1, 2, 3)) / norm
        g = pinball_grad(y[None], yhat, lv) * scale[lo:hi, None, None, None]
        g_sum += g.sum(axis=0)
        g_slot[lo:hi] = g.sum(axis=1)

    grads: GradientSet = {}
    shifts, _ = shift_profiles(model)
    weighted = np.tensordot(embedded, g_slot, axes=1)  # (out_len, C)
    for name, head in model.heads.items():
        feat, shift = feats[name], shifts[name]
        if head.per_channel:
            grads[f"{name}.weight"] = (
                np.einsum("bic,boc->cio", feat, g_sum) + np.einsum("i,oc->cio", shift, weighted)
            )
            grads[f"{name}.bias"] = g_sum.sum(axis=0).T
        else:
            grads[f"{name}.weight"] = (
                np.einsum("bic,boc->io", feat, g_sum) + np.outer(shift, weighted.sum(axis=1))
            )
            grads[f"{name}.bias"] = g_sum.sum(axis=(0, 2))

    d_embedded = np.einsum("moc,oc->m", g_slot, np.broadcast_to(resp, g_slot.shape[1:]))
    if slots.shared:
        grads["embedding.weight"] = np.array([d_embedded @ slots.levels])
        grads["embedding.bias"] = np.array([d_embedded.sum()])
    else:
        grads["embedding.weight"] = d_embedded * slots.levels
        grads["embedding.bias"] = d_embedded.copy()

    main = float(per_slot[0])
    aux = float(aux_weight(m) * per_slot[1:].sum())
    return LossBreakdown(main + aux, main, aux, per_slot), grads


def backward(inputs, targets, model: QuantileLinearModel) -> GradientSet:
    return loss_and_grad(inputs, targets, model)[1]
