"""Running moments and the adaptive proposal scale.

The scale matrix is ``C0`` during warm-up (``t <= t0`` samples seen) and
``s_d * (cov(X_0..X_{t-1}) + eps * I)`` afterwards, with the unbiased
``n - 1`` sample covariance.  The covariance follows the Haario
recursion one sample at a time (:func:`update_covariance`); :func:`observe`
absorbs a whole batch with the equivalent closed-form merge and then
recomputes the Cholesky factor from the full matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ContractError


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class AdaptState:
    t: int
    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray
    t0: int
    C0: np.ndarray
    s_d: float
    eps: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def default_C0(dim: int) -> np.ndarray:
    return (0.1 ** 2) * np.eye(dim) / dim


def default_s_d(dim: int) -> float:
    return 2.38 ** 2 / dim


def new_adapt_state(dim: int, t0: int = 0, C0=None, s_d: Optional[float] = None,
                    eps: float = 1e-6) -> AdaptState:
    """Empty state (no samples yet) with the given tuning."""
    C0 = default_C0(dim) if C0 is None else np.array(C0, dtype=float)
    if C0.shape != (dim, dim):
        raise ContractError(f"C0 must be {dim}x{dim}, got {C0.shape}")
    s_d = default_s_d(dim) if s_d is None else float(s_d)
    if s_d <= 0 or eps < 0:
        raise ContractError("s_d must be positive and eps non-negative")
    if t0 < 0:
        raise ContractError("t0 must be non-negative")
    return AdaptState(t=0, mean=np.zeros(dim), cov=s_d * eps * np.eye(dim),
                      factor=factorize(C0), t0=int(t0), C0=C0, s_d=s_d, eps=float(eps))


def update_moments(state: AdaptState, x) -> AdaptState:
    """Absorb ``x`` into the running mean only."""
    x = _check_point(state, x)
    t = state.t + 1
    return _evolve(state, t=t, mean=state.mean + (x - state.mean) / t)


def update_covariance(state: AdaptState, x) -> AdaptState:
    """One step of the covariance recursion (also advances mean and ``t``).

    With ``t`` samples already absorbed and ``x`` the new one::

        C_{t+1} = (t-1)/t C_t + s_d/t (t m_old m_old^T - (t+1) m_new m_new^T
                                       + x x^T + eps I)
    """
    if state.t < 1:
        raise ContractError("covariance recursion needs at least one prior sample")
    x = _check_point(state, x)
    t = state.t
    m_old = state.mean
    m_new = m_old + (x - m_old) / (t + 1)
    inner = t * (m_old[:, None] * m_old) - (t + 1) * (m_new[:, None] * m_new) + x[:, None] * x
    inner.flat[::state.dim + 1] += state.eps
    cov = ((t - 1) / t) * state.cov + (state.s_d / t) * inner
    return _evolve(state, t=t + 1, mean=m_new, cov=cov)


def current_scale(state: AdaptState) -> np.ndarray:
    return state.C0 if state.t <= state.t0 else state.cov


def observe(state: AdaptState, xs) -> AdaptState:
    """Absorb a batch of samples (rows of ``xs``) and refactorize once."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != state.dim:
        raise ContractError(f"samples have dimension {xs.shape[1]}, state expects {state.dim}")
    if state.t == 0:
        state = update_moments(state, xs[0])
        xs = xs[1:]
    n_b = xs.shape[0]
    if n_b == 0:
        return refresh_factor(state)
    # merging the batch in closed form equals applying update_covariance to
    # each row in turn (the recursion telescopes to the batch covariance)
    t, m = state.t, state.mean
    scatter = (t - 1) * (state.cov / state.s_d - state.eps * np.eye(state.dim))
    m_b = xs.mean(axis=0)
    dev = xs - m_b
    n = t + n_b
    diff = m_b - m
    scatter = scatter + dev.T @ dev + (t * n_b / n) * (diff[:, None] * diff)
    mean = m + diff * (n_b / n)
    cov = state.s_d * (scatter / (n - 1) + state.eps * np.eye(state.dim))
    return refresh_factor(_evolve(state, t=n, mean=mean, cov=cov))


def refresh_factor(state: AdaptState) -> AdaptState:
    C = current_scale(state)
    return _evolve(state, factor=_cholesky_jitter(C, _jitter_for(C)))


def factorize(C, jitter0: float = 1e-12) -> np.ndarray:
    """Lower Cholesky factor of ``C + j I`` for the smallest workable ``j``.

    ``j`` runs through ``0, jitter0, 10 jitter0, ..., 1e6 jitter0``.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {C.shape}")
    if np.any(np.abs(C - C.T) > 1e-10 * max(1.0, np.abs(C).max(initial=0.0))):
        raise ContractError("matrix to factorize is not symmetric")
    return _cholesky_jitter(C, jitter0)


def _cholesky_jitter(C, jitter0):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(C.shape[0])
    for k in range(7):
        try:
            return np.linalg.cholesky(C + (jitter0 * 10.0 ** k) * eye)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"matrix is not positive definite even with jitter {jitter0 * 1e6:g}:\n{C}")


def _evolve(state: AdaptState, **changes) -> AdaptState:
    # dataclasses.replace re-runs __init__; this hot path copies the dict instead
    new = object.__new__(AdaptState)
    new.__dict__.update(state.__dict__)
    new.__dict__.update(changes)
    return new


def _jitter_for(C: np.ndarray) -> float:
    scale = np.abs(np.diag(C)).mean() if C.size else 1.0
    return 1e-12 * (scale if scale > 0 else 1.0)


def _check_point(state: AdaptState, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise ContractError(f"sample has shape {x.shape}, state expects ({state.dim},)")
    return x
