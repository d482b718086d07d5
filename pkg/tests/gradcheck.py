"""Central finite-difference oracle for the multi-quantile objective."""

import numpy as np

from qlinear.loss import multitask_loss
from qlinear.model import forward_all_slots, init_model
from qlinear.quantile import sample_levels


def objective(x, y, model):
    # literal per-slot path, independent of the affine shortcut used for gradients
    return multitask_loss(y, forward_all_slots(x, model), model.slots).total


def numeric_grads(x, y, model, eps=1e-6):
    grads = {}
    for name, p in model.parameters().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = objective(x, y, model)
            p[idx] = orig - eps
            down = objective(x, y, model)
            p[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    """Largest per-array ``max|a - n| / max|n|`` over all parameter arrays."""
    worst = 0.0
    for name, n in numeric.items():
        scale = max(float(np.max(np.abs(n))), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic[name] - n))) / scale)
    return worst


def random_point(rng, variant, reconstruct, lookback=6, horizon=3, channels=2, m=3, batch=4,
                 margin=1e-3, **flags):
    """Random model, levels and data with every residual at least ``margin`` from the kink."""
    flags.setdefault("moving_average_w", 3)
    while True:
        model = init_model(variant, lookback, horizon, m, channels, rng, reconstruct=reconstruct, **flags)
        for head in model.heads.values():
            head.bias[...] = rng.normal(scale=0.3, size=head.bias.shape)
        model.slots.weights[:] = rng.normal(size=model.slots.weights.shape)
        model.slots.biases[:] = rng.normal(scale=0.3, size=model.slots.biases.shape)
        sample_levels(model.slots, rng)
        x = rng.normal(size=(batch, lookback, channels))
        y = rng.normal(size=(batch, model.out_len, channels))
        preds = forward_all_slots(x, model)
        if min(float(np.min(np.abs(y - p))) for p in preds) > margin:
            return model, x, y
