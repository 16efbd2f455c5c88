"""Weight normalization and importance resampling.

Resamplers return ancestor indices rather than copies of particles.
"""

from __future__ import annotations

import numpy as np

from .core import ContractError, DegeneratePopulationError


def normalize(log_weights) -> np.ndarray:
    """Normalized weights from log-weights, via a max shift."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ContractError("log-weights must be a non-empty vector")
    if np.isnan(lw).any():
        raise ContractError("log-weights contain NaN")
    top = lw.max()
    if top == -np.inf:
        raise DegeneratePopulationError("all importance weights are zero")
    if top == np.inf:
        raise ContractError("log-weights contain +inf")
    w = np.exp(lw - top)
    return w / w.sum()


def _select(cdf: np.ndarray, positions: np.ndarray, support_end: int) -> np.ndarray:
    idx = np.searchsorted(cdf, positions, side="right")
    # rounding can push a position past the last positive-weight cell
    return np.minimum(idx, support_end)


def multinomial_resample(log_weights, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    w = normalize(log_weights)
    cdf = np.cumsum(w)
    u = rng.random(count) * cdf[-1]
    return _select(cdf, u, np.flatnonzero(w)[-1])


def systematic_resample(log_weights, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    w = normalize(log_weights)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = (rng.random() + np.arange(count)) / count
    return _select(cdf, u, np.flatnonzero(w)[-1])


SCHEMES = {"multinomial": multinomial_resample, "systematic": systematic_resample}


def resample(log_weights, count: int, rng: np.random.Generator, scheme: str = "multinomial"):
    try:
        fn = SCHEMES[scheme]
    except KeyError:
        raise ContractError(f"unknown resampling scheme {scheme!r}") from None
    return fn(log_weights, count, rng)
