"""Rate coding: pixel-valued observations to {0,1} spike trains.

Input spikes are non-negative for every network variant; only hidden
neurons ever emit ternary values. Both encoders produce a [T, ...] train
whose per-step firing probability equals the normalized intensity.
"""

from __future__ import annotations

import numpy as np

from .tensor import FLOAT, Rng, Tensor


def normalize(obs: Tensor) -> Tensor:
    """Map integer pixel values 0..255 to [0, 1] by dividing by 255."""
    arr = np.asarray(obs)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError(
            f"observation values must lie in [0, 255], got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr.astype(FLOAT) / FLOAT(255.0)


def _check_probs(p: Tensor) -> Tensor:
    p = np.asarray(p)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError(f"firing probabilities must lie in [0, 1], got range [{p.min()}, {p.max()}]")
    return p


def bernoulli_encode(p: Tensor, steps: int, rng: Rng) -> Tensor:
    """Independent Bernoulli(p) spike per element per time step.

    Output is [steps, *p.shape] float32 in {0,1}. Elements with p exactly 0
    or 1 are forced (their outcome carries no randomness) and consume no
    draws, which keeps encoding cheap for binary frames.
    """
    p = _check_probs(p)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    out = np.empty((steps,) + p.shape, dtype=FLOAT)
    flat = p.reshape(-1)
    frac = (flat > 0.0) & (flat < 1.0)
    out_flat = out.reshape(steps, -1)
    out_flat[:, :] = (flat == 1.0).astype(FLOAT)
    if frac.any():
        draws = rng.gen.random((steps, int(frac.sum())))
        out_flat[:, frac] = (draws < flat[frac]).astype(FLOAT)
    return out


def poisson_encode(p: Tensor, steps: int, rng: Rng) -> Tensor:
    """Poisson-derived rate coding with the same per-step firing probability.

    Each element gets a per-step Poisson count with rate -ln(1-p) and spikes
    when the count is nonzero, so P(spike per step) = 1 - exp(ln(1-p)) = p
    exactly; the train differs from the Bernoulli encoder only in its draw
    mechanism.
    """
    p = _check_probs(p)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    out = np.empty((steps,) + p.shape, dtype=FLOAT)
    flat = p.reshape(-1)
    frac = (flat > 0.0) & (flat < 1.0)
    out_flat = out.reshape(steps, -1)
    out_flat[:, :] = (flat == 1.0).astype(FLOAT)
    if frac.any():
        lam = -np.log1p(-flat[frac])
        counts = rng.gen.poisson(lam, size=(steps, int(frac.sum())))
        out_flat[:, frac] = (counts > 0).astype(FLOAT)
    return out


ENCODERS = {"bernoulli": bernoulli_encode, "poisson": poisson_encode}
