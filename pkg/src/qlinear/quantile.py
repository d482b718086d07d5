"""Quantile-level slots and their affine scalar embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEDIAN = 0.5
# smallest positive double; uniform() samples [low, high) so draws land in (0, 1)
_OPEN_LOW = np.nextafter(0.0, 1.0)


def embed_level(level, weight, bias):
    """Affine embedding ``level * weight + bias``; no activation."""
    return level * weight + bias


@dataclass
class QuantileSlots:
    """M quantile levels and their embedding parameters.

    Slot 0 is pinned to the median. With ``shared=True`` a single
    ``(weight, bias)`` pair serves every slot, otherwise each slot owns one.
    """

    levels: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    shared: bool = False

    @classmethod
    def create(cls, m: int, shared: bool = False) -> "QuantileSlots":
        if m < 1:
            raise ValueError(f"number of quantile slots must be >= 1, got {m}")
        n_params = 1 if shared else m
        levels = np.full(m, MEDIAN)
        return cls(levels=levels, weights=np.ones(n_params), biases=np.zeros(n_params), shared=shared)

    @property
    def m(self) -> int:
        return self.levels.shape[0]

    def slot_weights(self) -> np.ndarray:
        return np.broadcast_to(self.weights, self.levels.shape)

    def slot_biases(self) -> np.ndarray:
        return np.broadcast_to(self.biases, self.levels.shape)

    @property
    def embedded(self) -> np.ndarray:
        return embed_level(self.levels, self.slot_weights(), self.slot_biases())

    def embed(self, level, slot: int = 0):
        """Embed an arbitrary level through the parameters of ``slot``."""
        k = 0 if self.shared else slot
        return embed_level(level, self.weights[k], self.biases[k])

    def n_params(self) -> int:
        return self.weights.size + self.biases.size

    def copy(self) -> "QuantileSlots":
        return QuantileSlots(self.levels.copy(), self.weights.copy(), self.biases.copy(), self.shared)


def draw_levels(rng: np.random.Generator, size) -> np.ndarray:
    return rng.uniform(_OPEN_LOW, 1.0, size=size)


def sample_levels(slots: QuantileSlots, rng: np.random.Generator) -> QuantileSlots:
    """Redraw levels of slots 1..M-1 in place; slot 0 stays at the median.

    M == 1 consumes no randomness.
    """
    if slots.m > 1:
        slots.levels[1:] = draw_levels(rng, slots.m - 1)
    slots.levels[0] = MEDIAN
    return slots
