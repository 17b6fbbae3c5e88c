"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import math

import numpy as np

from .optim import Parameter, zero_grads
from .tensor import no_grad


class NonFiniteLoss(ArithmeticError):
    pass


def gradcheck(loss_fn, params: list[Parameter], epsilon: float = 1e-5,
              max_coords_per_param: int = 6,
              rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be a deterministic closure returning a scalar Tensor for
    the current parameter values. Coordinates are subsampled per parameter
    when a tensor has more than ``max_coords_per_param`` entries.

    rel error per coordinate: |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
    """
    if rng is None:
        rng = np.random.default_rng(0)

    zero_grads(params)
    loss = loss_fn()
    if not math.isfinite(loss.item()):
        raise NonFiniteLoss(f"loss is {loss.item()}")
    loss.backward()
    analytic = {p.name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for p in params}
    zero_grads(params)

    worst = 0.0
    for p in params:
        flat = p.t.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        ga_flat = analytic[p.name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            with no_grad():
                f_plus = loss_fn().item()
            flat[c] = orig - epsilon
            with no_grad():
                f_minus = loss_fn().item()
            flat[c] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NonFiniteLoss("non-finite loss during finite differencing")
            g_n = (f_plus - f_minus) / (2.0 * epsilon)
            g_a = ga_flat[c]
            rel = abs(g_a - g_n) / max(abs(g_a), abs(g_n), 1e-8)
            worst = max(worst, rel)
    return worst
