"""Effective sample sizes, squared-error summaries and ensemble statistics.

The MCMC effective sample size follows the ground-truth autocorrelation
estimator: autocorrelations of ``h`` are computed around the known
``E[h]`` and scaled by the known ``V[h]``, and the sum is truncated just
before the first lag whose autocorrelation drops below 0.05.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .core import ContractError
from .resample import normalize

log = logging.getLogger(__name__)

ACF_CUTOFF = 0.05


class DegenerateDiagnosticError(ValueError):
    """A diagnostic is undefined for the input (zero variance, empty series)."""


@dataclass(frozen=True)
class GroundTruth:
    """Reference moments of a target.

    ``fourth_central`` (per-dimension ``E[(X - mean)^4]``) is only needed by
    the MCMC effective sample size of the variance functions; when absent the
    variance of ``(X - mean)^2`` is taken from the series itself.
    """

    mean: np.ndarray
    variance: np.ndarray
    source: str = "analytic"
    log_evidence: Optional[float] = None
    fourth_central: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.shape != var.shape or mean.ndim != 1:
            raise ContractError("ground-truth mean and variance must be vectors of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ContractError("ground-truth moments must be finite")
        if np.any(var <= 0):
            raise ContractError("ground-truth variances must be positive")
        if self.source not in ("analytic", "defensive_is"):
            raise ContractError(f"unknown ground-truth source {self.source!r}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)
        if self.fourth_central is not None:
            object.__setattr__(self, "fourth_central",
                               np.atleast_1d(np.asarray(self.fourth_central, dtype=float)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_target_info(cls, info: dict) -> "GroundTruth":
        """Analytic truth from the ``info`` dict of a synthetic target."""
        cov = np.atleast_2d(info["cov"])
        return cls(mean=info["mean"], variance=np.diag(cov).copy(), source="analytic",
                   log_evidence=info.get("log_evidence"))


@dataclass
class RunSummary:
    """Checkpointed estimates of one run.

    ``log_evidence`` holds NaN for algorithms without importance weights.
    """

    run_id: int
    eval_counts: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_evidence: np.ndarray
    ess: Optional[float] = None

    def __post_init__(self):
        self.eval_counts = np.asarray(self.eval_counts, dtype=np.int64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        self.log_evidence = np.asarray(self.log_evidence, dtype=float)
        k = self.eval_counts.size
        if self.means.shape[0] != k or self.variances.shape != self.means.shape \
                or self.log_evidence.shape != (k,):
            raise ContractError("checkpoint arrays have inconsistent shapes")
        if np.any(np.diff(self.eval_counts) <= 0):
            raise ContractError("checkpoints must be strictly ordered by eval_count")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def final_se(self, truth: GroundTruth) -> np.ndarray:
        """Per-dimension squared error of the final mean estimate."""
        return (self.means[-1] - truth.mean) ** 2

    def final_max_se(self, truth: GroundTruth) -> float:
        return max_se(self.means[-1], self.variances[-1], truth)


def summary_from_gris(trace, run_id: int, estimator: str = "samples") -> RunSummary:
    """Checkpoints of a GRIS trace; ``estimator`` picks S-based or weighted moments."""
    cps = trace.checkpoints
    if estimator == "samples":
        means = [c.mean for c in cps]
        variances = [c.var for c in cps]
    elif estimator == "weighted":
        means = [c.weighted_mean for c in cps]
        variances = [c.weighted_var for c in cps]
    else:
        raise ContractError(f"unknown estimator {estimator!r}")
    return RunSummary(run_id, [c.eval_count for c in cps], means, variances,
                      [c.log_evidence for c in cps])


def summary_from_chain(trace, run_id: int, truth: Optional[GroundTruth] = None) -> RunSummary:
    """Checkpoints of an MCMC trace (no evidence), with ESS when ``truth`` is given."""
    cps = trace.checkpoints
    ess = None
    if truth is not None:
        try:
            ess = ess_mc_min(trace.samples, truth)
        except DegenerateDiagnosticError as e:
            log.warning("run %d: ESS undefined (%s)", run_id, e)
    return RunSummary(run_id, [c.eval_count for c in cps], [c.mean for c in cps],
                      [c.var for c in cps], np.full(len(cps), np.nan), ess)


# ---------------------------------------------------------------------------
# effective sample sizes


def ess_is(log_weights) -> float:
    """``1 / sum(w_hat^2)`` for self-normalized weights ``w_hat``.

    Evaluated as ``(sum w)^2 / sum w^2`` on max-shifted weights, which is
    exact for equal and one-hot weights.
    """
    lw = np.asarray(log_weights, dtype=float)
    normalize(lw)   # validation only
    w = np.exp(lw - lw.max())
    s = w.sum()
    return float(s * s / np.dot(w, w))


def _check_series(series, var):
    h = np.asarray(series, dtype=float)
    if h.ndim != 1 or h.size == 0:
        raise DegenerateDiagnosticError("series must be a non-empty vector")
    if not var > 0:
        raise DegenerateDiagnosticError(f"reference variance must be positive, got {var}")
    return h


def autocorr_at_lag(series, mean: float, var: float, lag: int) -> float:
    """Lag-``lag`` autocorrelation around the reference ``mean`` and ``var``.

    ``sum_{j>lag} (h_j - mean)(h_{j-lag} - mean) / (var (N - lag))``.
    """
    h = _check_series(series, var)
    n = h.size
    if not 1 <= lag <= n - 1:
        raise ContractError(f"lag must lie in [1, {n - 1}], got {lag}")
    y = h - mean
    return float(np.dot(y[lag:], y[:-lag]) / (var * (n - lag)))


def autocorr(series, mean: float, var: float) -> np.ndarray:
    """Autocorrelations at lags ``1 .. N-1`` (index ``i-1`` holds lag ``i``)."""
    h = _check_series(series, var)
    n = h.size
    if n == 1:
        return np.empty(0)
    y = h - mean
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, nfft)
    sums = np.fft.irfft(f * np.conj(f), nfft)[1:n]
    return sums / (var * (n - np.arange(1, n)))


@dataclass(frozen=True)
class EssMc:
    value: float
    cutoff: int
    truncated: bool
    clamped: bool


def ess_mc_details(series, mean: float, var: float) -> EssMc:
    """MCMC effective sample size with its truncation bookkeeping.

    Lags ``1 .. c-1`` enter ``N / (1 + 2 sum (1 - i/N) rho_i)``, where ``c``
    is the first lag with ``rho_c < 0.05``.  When no such lag exists all
    ``N - 1`` lags are used and ``truncated`` is set; values outside
    ``(0, N]`` are clamped to ``N`` and ``clamped`` is set.
    """
    h = _check_series(series, var)
    n = h.size
    rho = autocorr(h, mean, var)
    below = np.flatnonzero(rho < ACF_CUTOFF)
    if below.size:
        cutoff, truncated = int(below[0]) + 1, False
        used = rho[:cutoff - 1]
    else:
        cutoff, truncated = n - 1, n > 1
        used = rho
    lags = np.arange(1, used.size + 1)
    denom = 1.0 + 2.0 * np.sum((1.0 - lags / n) * used)
    value = n / denom if denom > 0 else np.inf
    clamped = not 0 < value <= n
    if clamped:
        value = float(n)
    return EssMc(float(value), cutoff, truncated, clamped)


def ess_mc(series, mean: float, var: float) -> float:
    return ess_mc_details(series, mean, var).value


def ess_mc_min(chain, truth: GroundTruth) -> float:
    """Minimum ESS over coordinates and squared deviations from the true mean."""
    X = np.asarray(chain, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0 or X.shape[1] != truth.dim:
        raise DegenerateDiagnosticError(f"chain of shape {X.shape} does not match truth")
    best = np.inf
    for k in range(truth.dim):
        best = min(best, ess_mc(X[:, k], truth.mean[k], truth.variance[k]))
        sq = (X[:, k] - truth.mean[k]) ** 2
        if truth.fourth_central is not None:
            v = truth.fourth_central[k] - truth.variance[k] ** 2
        else:
            v = float(np.var(sq, ddof=1)) if sq.size > 1 else 0.0
        best = min(best, ess_mc(sq, truth.variance[k], v))
    return float(best)


# ---------------------------------------------------------------------------
# squared errors and ensembles


def max_se(est_mean, est_var, truth: GroundTruth) -> float:
    """Largest squared error over mean and variance estimates and dimensions."""
    est_mean = np.asarray(est_mean, dtype=float)
    est_var = np.asarray(est_var, dtype=float)
    if est_mean.shape != truth.mean.shape or est_var.shape != truth.variance.shape:
        raise ContractError("estimate and truth dimensions differ")
    return float(max(np.max((est_mean - truth.mean) ** 2),
                     np.max((est_var - truth.variance) ** 2)))


@dataclass
class EnsembleStats:
    """Per-checkpoint bias^2, across-run variance and MSE, shape ``(K, d)``."""

    eval_counts: np.ndarray
    bias2: np.ndarray
    variance: np.ndarray
    mse: np.ndarray

    def pooled(self):
        """Averages over dimensions, each of shape ``(K,)``."""
        return self.bias2.mean(axis=1), self.variance.mean(axis=1), self.mse.mean(axis=1)


def ensemble_stats(estimates, truth, eval_counts) -> EnsembleStats:
    """Statistics of ``estimates`` (shape ``(R, K, d)``) against ``truth``.

    The variance uses ``R - 1`` degrees of freedom (zero for a single run),
    so that ``mse = bias2 + (R - 1) / R * variance``.
    """
    E = np.asarray(estimates, dtype=float)
    if E.ndim == 2:
        E = E[:, :, None]
    R = E.shape[0]
    err = E - np.asarray(truth, dtype=float)
    bias2 = err.mean(axis=0) ** 2
    variance = E.var(axis=0, ddof=1) if R > 1 else np.zeros(E.shape[1:])
    mse = np.mean(err * err, axis=0)
    return EnsembleStats(np.asarray(eval_counts), bias2, variance, mse)


def _aligned(runs: Sequence[RunSummary]) -> np.ndarray:
    if not runs:
        raise ContractError("no runs to aggregate")
    counts = runs[0].eval_counts
    for r in runs[1:]:
        if not np.array_equal(r.eval_counts, counts):
            raise ContractError(f"run {r.run_id} has checkpoints misaligned with run "
                                f"{runs[0].run_id}")
    return counts


def aggregate(runs: Sequence[RunSummary], truth: GroundTruth) -> dict:
    """Ensemble statistics of mean and variance estimates (and log-evidence).

    Returns a dict with keys ``"mean"`` and ``"variance"`` holding
    :class:`EnsembleStats`, plus ``"log_evidence"`` when every run carries
    evidence estimates and the truth knows the log-evidence.
    """
    counts = _aligned(runs)
    out = {
        "mean": ensemble_stats([r.means for r in runs], truth.mean, counts),
        "variance": ensemble_stats([r.variances for r in runs], truth.variance, counts),
    }
    lz = np.array([r.log_evidence for r in runs])
    if truth.log_evidence is not None and lz.size and not np.isnan(lz).any():
        out["log_evidence"] = ensemble_stats(lz, truth.log_evidence, counts)
    return out


@dataclass(frozen=True)
class BoxStats:
    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n_outliers: int


def box_stats(values) -> BoxStats:
    """Quartiles and Tukey whiskers (most extreme data within 1.5 IQR)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DegenerateDiagnosticError("no values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return BoxStats(float(q1), float(med), float(q3), float(inside.min()), float(inside.max()),
                    int(v.size - inside.size))


def sign_test_less_equal(a, b) -> float:
    """One-sided sign-test p-value for ``H1: median(a - b) < 0`` over pairs.

    Ties are dropped.  Small p-values favour ``a`` being smaller.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("paired samples must be vectors of equal length")
    diff = a - b
    n_less = int(np.sum(diff < 0))
    n = int(np.sum(diff != 0))
    if n == 0:
        warnings.warn("sign test with all ties", RuntimeWarning)
        return 1.0
    return float(binomtest(n_less, n, 0.5, alternative="greater").pvalue)
