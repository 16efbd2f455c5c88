"""Gaussian proposal shifted by a decaying gradient drift.

A proposal around an ancestor ``x'`` is ``N(x' + D, L L^T)`` where
``D = (delta / t**decay_exponent) * grad log f(x')``.  Drifts longer than a
cap (by default ``10 * sqrt(trace(C))``) are shrunk onto the cap, which keeps
Langevin steps from exploding in curved tails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import ContractError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class DriftConfig:
    delta: float = 0.0
    decay_exponent: float = 1.5
    cap_factor: Optional[float] = 10.0

    def __post_init__(self):
        if self.delta < 0:
            raise ContractError(f"delta must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class ProposalParams:
    origin: np.ndarray
    drift_vec: np.ndarray
    factor: np.ndarray
    log_det_half: float

    @property
    def mean(self) -> np.ndarray:
        return self.origin + self.drift_vec


def drift(t: int, grad, cfg: DriftConfig) -> np.ndarray:
    """``(delta / t**a) * grad`` with ``a = cfg.decay_exponent``."""
    if t < 1:
        raise ContractError(f"drift time index must be >= 1, got {t}")
    return (cfg.delta / t ** cfg.decay_exponent) * np.asarray(grad, dtype=float)


def cap_drift(vec: np.ndarray, factor: np.ndarray, cap_factor: Optional[float]) -> np.ndarray:
    """Rescale ``vec`` onto ``cap_factor * sqrt(trace(L L^T))`` if longer."""
    if cap_factor is None:
        return vec
    cap = cap_factor * np.sqrt(np.sum(factor * factor))
    norm = np.sqrt(vec @ vec)
    if norm > cap:
        return vec * (cap / norm)
    return vec


def make_params(origin, drift_vec, factor) -> ProposalParams:
    factor = np.asarray(factor, dtype=float)
    diag = np.diag(factor)
    with np.errstate(divide="ignore"):
        log_det_half = float(np.sum(np.log(diag)))
    return ProposalParams(np.asarray(origin, dtype=float), np.asarray(drift_vec, dtype=float),
                          factor, log_det_half)


def langevin_params(t: int, origin, grad, factor, cfg: DriftConfig) -> ProposalParams:
    """Proposal around ``origin`` with the capped, decayed gradient drift."""
    d = drift(t, grad, cfg) if cfg.delta > 0 else np.zeros_like(np.asarray(origin, dtype=float))
    return make_params(origin, cap_drift(d, factor, cfg.cap_factor), factor)


def propose(params: ProposalParams, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(params.origin.shape[0])
    return params.origin + params.drift_vec + params.factor @ z


def proposal_logpdf(x, params: ProposalParams) -> float:
    x = np.asarray(x, dtype=float)
    d = params.origin.shape[0]
    if x.shape != (d,):
        raise ContractError(f"point has shape {x.shape}, proposal is {d}-dimensional")
    z = solve_triangular(params.factor, x - params.origin - params.drift_vec,
                         lower=True, check_finite=False)
    return float(-0.5 * (z @ z) - params.log_det_half - 0.5 * d * LOG_2PI)
