"""Targets with gradient access, evaluation counting and the RNG contract.

Every sampler in the package talks to a density only through
:func:`counted_eval`, so the number of target evaluations spent by a run can
be read off ``target.counter.count``.  Requesting the log-density and the
gradient at the same point, together or back to back, costs one evaluation.
:func:`counted_eval_batch` evaluates many points in one call and charges one
evaluation per row.

Random streams are numpy ``Generator`` objects driven by the Philox4x64
counter-based bit generator.  A run stream is keyed by
``SeedSequence(base_seed, spawn_key=(run_index,))``, which makes streams for
different run indices statistically independent and bit-reproducible across
numpy versions that keep Philox and SeedSequence stable (numpy >= 1.17).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

RngStream = np.random.Generator

RNG_ALGORITHM = "numpy.random.Philox (4x64-10) keyed by SeedSequence(base_seed, spawn_key=(run_index,))"


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


class DegeneratePopulationError(RuntimeError):
    """All importance weights of a population are zero (log-weight -inf)."""


@dataclass
class EvalCounter:
    """Evaluation count plus a one-point cache of the most recent query."""

    count: int = 0
    last_key: Optional[bytes] = None
    last_logf: float = np.nan
    last_grad: Optional[np.ndarray] = None

    def reset(self) -> None:
        self.count = 0
        self.last_key = None
        self.last_logf = np.nan
        self.last_grad = None


class TargetModel:
    """An unnormalized log-density with analytic gradient.

    Parameters
    ----------
    dim : int
        Dimension of the support.
    log_density : callable
        ``x -> log f(x)``; may return ``-inf``.
    log_density_and_grad : callable
        ``x -> (log f(x), grad log f(x))``.
    name : str, optional
        Label used in artifacts.
    info : dict, optional
        Free-form metadata (analytic moments, construction parameters).
    batch_log_density_and_grad : callable, optional
        ``X -> (log f(X), grad log f(X))`` for the rows of an ``(n, dim)``
        array.  Defaults to looping over the rows.
    """

    def __init__(
        self,
        dim: int,
        log_density: Callable[[np.ndarray], float],
        log_density_and_grad: Callable[[np.ndarray], tuple],
        name: str = "target",
        info: Optional[dict] = None,
        batch_log_density_and_grad: Optional[Callable[[np.ndarray], tuple]] = None,
    ):
        if int(dim) < 1:
            raise ContractError(f"dim must be positive, got {dim}")
        self.dim = int(dim)
        self._log_density = log_density
        self._log_density_and_grad = log_density_and_grad
        self.name = name
        self.info = dict(info or {})
        self._batch = batch_log_density_and_grad or self._row_loop
        self.counter = EvalCounter()

    def _row_loop(self, X):
        logf = np.empty(X.shape[0])
        grad = np.empty(X.shape)
        for i, x in enumerate(X):
            logf[i], grad[i] = self._log_density_and_grad(x)
        return logf, grad

    def log_density(self, x) -> float:
        """Uncounted log-density (ground-truth tooling and plotting only)."""
        return float(self._log_density(np.asarray(x, dtype=float)))

    def log_density_and_grad(self, x) -> tuple[float, np.ndarray]:
        """Uncounted joint evaluation."""
        logf, grad = self._log_density_and_grad(np.asarray(x, dtype=float))
        return float(logf), np.asarray(grad, dtype=float)

    def log_density_and_grad_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Uncounted joint evaluation at the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        logf, grad = self._batch(X)
        return np.asarray(logf, dtype=float), np.asarray(grad, dtype=float)

    def grad_log_density(self, x) -> np.ndarray:
        return self.log_density_and_grad(x)[1]

    def clone(self) -> "TargetModel":
        """Copy sharing the (immutable) density but owning a fresh counter."""
        batch = None if self._batch == self._row_loop else self._batch
        return TargetModel(self.dim, self._log_density, self._log_density_and_grad,
                           name=self.name, info=self.info, batch_log_density_and_grad=batch)

    def __repr__(self):
        return f"TargetModel(name={self.name!r}, dim={self.dim}, evals={self.counter.count})"


def counted_eval(target: TargetModel, x, need_grad: bool = False):
    """Evaluate ``log f(x)`` (and optionally its gradient), charging the budget.

    The counter is incremented by one unless ``x`` is bitwise identical to the
    previously queried point, in which case the cached values are returned
    (a missing cached gradient is filled in for free).

    Returns
    -------
    logf : float
    grad : ndarray or None
        ``None`` when ``need_grad`` is false.
    """
    if type(x) is not np.ndarray or x.dtype != np.float64:
        x = np.asarray(x, dtype=float)
    if x.shape != (target.dim,):
        raise ContractError(f"point has shape {x.shape}, target expects ({target.dim},)")
    c = target.counter
    key = x.tobytes()
    if key == c.last_key:
        if need_grad and c.last_grad is None:
            c.last_grad = np.asarray(target._log_density_and_grad(x)[1], dtype=float)
        return c.last_logf, (c.last_grad if need_grad else None)
    c.count += 1
    if need_grad:
        logf, grad = target._log_density_and_grad(x)
        logf, grad = float(logf), np.asarray(grad, dtype=float)
    else:
        logf, grad = float(target._log_density(x)), None
    c.last_key, c.last_logf, c.last_grad = key, logf, grad
    return logf, grad


def counted_eval_batch(target: TargetModel, X):
    """Joint evaluation at the rows of ``X``, charging one evaluation per row.

    NaN log-densities are reported as ``-inf``.  The one-point cache is
    invalidated.

    Returns
    -------
    logf : ndarray, shape (n,)
    grad : ndarray, shape (n, dim)
    """
    if type(X) is not np.ndarray or X.dtype != np.float64:
        X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != target.dim:
        raise ContractError(f"points have shape {X.shape}, target expects (n, {target.dim})")
    c = target.counter
    c.count += X.shape[0]
    c.last_key = None
    with np.errstate(all="ignore"):
        logf, grad = target._batch(X)
    logf = np.asarray(logf, dtype=float).reshape(X.shape[0])
    grad = np.asarray(grad, dtype=float).reshape(X.shape)
    logf[np.isnan(logf)] = -np.inf
    return logf, grad


def derive_run_stream(base_seed: int, run_index: int) -> RngStream:
    """Independent, reproducible generator for replicate ``run_index``."""
    if run_index < 0:
        raise ContractError(f"run_index must be >= 0, got {run_index}")
    seq = np.random.SeedSequence(int(base_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(run_index),))
    return np.random.Generator(np.random.Philox(seq))
