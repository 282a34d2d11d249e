"""Deterministic second-order (Heun) sampler over the Karras noise ladder."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NumericError
from .precond import SigmaSchedule, wrap_denoise


def _initial_noise(rng, shape):
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    # one generator per batch item keeps items independent of batch order
    gens: Sequence[np.random.Generator] = rng
    if len(gens) != shape[0]:
        raise ValueError("need one generator per batch item")
    return np.stack([g.standard_normal(shape[1:]) for g in gens])


def heun_sample(d, cond, sched: SigmaSchedule, rng) -> np.ndarray:
    """Integrate the probability-flow ODE from ``sigma_max`` to 0.

    ``cond`` is ``(C, H, W)`` for one field or ``(B, C, H, W)`` for a batch.
    ``rng`` is a numpy Generator, or a sequence of Generators with one per
    batch item.
    """
    cond = np.asarray(cond, dtype=np.float64)
    single = cond.ndim == 3
    c = cond[None] if single else cond
    shape = (c.shape[0],) + c.shape[2:]
    sig = sched.ladder()

    def denoise(x, s):
        return wrap_denoise(d, x, np.full(shape[0], s), c, sched.sigma_data)

    x = _initial_noise(rng, shape) * sig[0]
    for i in range(len(sig) - 1):
        s_cur, s_next = sig[i], sig[i + 1]
        slope = (x - denoise(x, s_cur)) / s_cur
        x_next = x + (s_next - s_cur) * slope
        if s_next > 0:
            slope_next = (x_next - denoise(x_next, s_next)) / s_next
            x_next = x + (s_next - s_cur) * 0.5 * (slope + slope_next)
        if not np.all(np.isfinite(x_next)):
            raise NumericError(f"non-finite sampler state at step {i} (sigma={s_cur:g})")
        x = x_next
    return x[0] if single else x
