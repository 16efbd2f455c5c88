"""Gradient importance sampling (population Monte Carlo with Langevin drift).

Each iteration draws ``p`` ancestors uniformly from the ``p`` most recent
entries of the sample list ``S``, proposes from the drifted Gaussian around
each, weighs the proposals by ``f / q`` and appends ``p`` multinomially (or
systematically) resampled points to ``S``.  The resampled points feed the
adaptive covariance.  The first ``p`` entries of ``S`` (the seed points) are
discarded at the end.

The tempered variant propagates with weights ``g_t / q`` along a geometric or
mixture bridge from ``g0`` to ``f`` while every ``f / q`` weight is kept for a
recycled self-normalized estimate of the posterior and of the evidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .adapt import new_adapt_state, observe
from .core import ContractError, DegeneratePopulationError, TargetModel, counted_eval, \
    counted_eval_batch
from .proposal import LOG_2PI, DriftConfig
from .resample import resample

log = logging.getLogger(__name__)


@dataclass
class GrisConfig:
    population: int = 10
    sample_size: Optional[int] = None
    eval_budget: Optional[int] = None
    drift: DriftConfig = field(default_factory=DriftConfig)
    t0: Optional[int] = None          # defaults to one population
    C0: Optional[np.ndarray] = None   # defaults to 0.01 I / d
    s_d: Optional[float] = None       # defaults to 2.38^2 / d
    eps: float = 1e-6
    adapt_interval: int = 1           # iterations between covariance refreshes
    resample_scheme: str = "multinomial"
    checkpoint_stride: int = 100

    def __post_init__(self):
        if self.population < 2:
            raise ContractError("population must be >= 2")
        if (self.sample_size is None) == (self.eval_budget is None):
            raise ContractError("set exactly one of sample_size / eval_budget")
        if self.adapt_interval < 1 or self.checkpoint_stride < 1:
            raise ContractError("adapt_interval and checkpoint_stride must be >= 1")


@dataclass(frozen=True)
class BridgeSpec:
    kind: str
    g0: TargetModel
    schedule: np.ndarray

    def __post_init__(self):
        if self.kind not in ("geometric", "mixture"):
            raise ContractError(f"unknown bridge kind {self.kind!r}")
        rho = np.asarray(self.schedule, dtype=float)
        if rho.ndim != 1 or rho.size == 0 or rho[-1] != 1.0 or np.any(np.diff(rho) <= 0):
            raise ContractError("schedule must be strictly increasing and end at 1")
        if rho[0] <= 0:
            raise ContractError("schedule values must be positive")
        object.__setattr__(self, "schedule", rho)

    def rho(self, t: int) -> float:
        """Tempering level at iteration ``t``; 0 at ``t = 0``, 1 after ``T``."""
        if t <= 0:
            return 0.0
        return float(self.schedule[min(t, self.schedule.size) - 1])


@dataclass
class Checkpoint:
    eval_count: int
    mean: np.ndarray            # unweighted, over resampled S
    var: np.ndarray
    weighted_mean: np.ndarray   # self-normalized over all f/q weights
    weighted_var: np.ndarray
    log_evidence: float


@dataclass
class SampleTrace:
    samples: np.ndarray
    raw_log_weights: np.ndarray         # propagation weights g_t/q (= f/q untempered)
    recycled_log_weights: np.ndarray    # f/q for every proposed point
    proposed: np.ndarray
    checkpoints: list
    iterations: int
    evals: int
    truncated: bool = False

    @property
    def log_evidence(self) -> float:
        return evidence(self.recycled_log_weights)

    def weighted_estimates(self, log_weights=None):
        """Self-normalized mean and variance of the proposed points."""
        lw = self.recycled_log_weights if log_weights is None else np.asarray(log_weights)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        m = w @ self.proposed
        return m, w @ (self.proposed - m) ** 2


def evidence(log_weights) -> float:
    """Log of the arithmetic mean of the weights."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0:
        raise ContractError("evidence needs at least one weight")
    return float(logsumexp(lw) - np.log(lw.size))


def rho_schedule(T: int, kind: str = "linear", a: float = 2.0) -> np.ndarray:
    """Tempering levels ``rho_1..rho_T``: ``t/T`` or ``(t/T)**a``."""
    if T < 1:
        raise ContractError("T must be >= 1")
    r = np.arange(1, T + 1) / T
    if kind == "linear":
        out = r
    elif kind == "power":
        if a <= 0:
            raise ContractError("power exponent must be positive")
        out = r ** a
    else:
        raise ContractError(f"unknown schedule kind {kind!r}")
    out[-1] = 1.0
    return out


def bridge_combine(kind: str, rho: float, log_g0, log_f):
    """``log g_t`` from the endpoint log-densities (scalars or arrays)."""
    if rho == 1.0:
        return log_f
    if rho == 0.0:
        return log_g0
    if kind == "geometric":
        return (1.0 - rho) * log_g0 + rho * log_f
    return np.logaddexp(np.log1p(-rho) + log_g0, np.log(rho) + log_f)


def bridge_grad(kind: str, rho: float, log_g0, grad_g0, log_f, grad_f):
    """Gradient of ``log g_t`` from the endpoint gradients.

    Accepts a single point or stacked rows (``grad_*`` of shape ``(n, d)``).
    """
    if rho == 1.0:
        return grad_f
    if kind == "geometric":
        return (1.0 - rho) * grad_g0 + rho * grad_f
    a = np.log1p(-rho) + np.asarray(log_g0, dtype=float)
    b = np.log(rho) + np.asarray(log_f, dtype=float)
    with np.errstate(invalid="ignore"):
        r = np.exp(b - np.logaddexp(a, b))
    r = np.where(np.isnan(r), 0.0, r)[..., None]
    return (1.0 - r) * grad_g0 + r * grad_f


def bridge_logdensity(spec: BridgeSpec, target: TargetModel, t: int, x):
    """``(log g_t(x), log f(x))``; ``log f`` is charged to ``target``'s counter."""
    if t < 0 or t > spec.schedule.size:
        raise ContractError(f"t must lie in [0, {spec.schedule.size}]")
    log_f, _ = counted_eval(target, x)
    log_g0, _ = counted_eval(spec.g0, x)
    return bridge_combine(spec.kind, spec.rho(t), log_g0, log_f), log_f


class _Moments:
    """Running unweighted mean/variance around a fixed shift."""

    def __init__(self, shift):
        self.shift = np.asarray(shift, dtype=float)
        self.n = 0
        self.s1 = np.zeros_like(self.shift)
        self.s2 = np.zeros_like(self.shift)

    def add(self, xs):
        y = xs - self.shift
        self.n += len(xs)
        self.s1 += y.sum(axis=0)
        self.s2 += (y * y).sum(axis=0)

    def estimates(self):
        if self.n == 0:
            nan = np.full_like(self.shift, np.nan)
            return nan, nan
        m = self.s1 / self.n
        return self.shift + m, np.maximum(self.s2 / self.n - m * m, 0.0)


class _WeightedMoments:
    """Running self-normalized moments and log evidence from log-weights."""

    def __init__(self, shift):
        self.shift = np.asarray(shift, dtype=float)
        self.top = -np.inf
        self.sw = 0.0
        self.s1 = np.zeros_like(self.shift)
        self.s2 = np.zeros_like(self.shift)
        self.n = 0

    def add(self, xs, lw):
        self.n += len(lw)
        new_top = max(self.top, lw.max())
        if new_top == -np.inf:
            return
        if new_top > self.top:
            scale = np.exp(self.top - new_top) if self.top > -np.inf else 0.0
            self.sw *= scale
            self.s1 *= scale
            self.s2 *= scale
            self.top = new_top
        w = np.exp(lw - self.top)
        y = xs - self.shift
        self.sw += w.sum()
        self.s1 += w @ y
        self.s2 += w @ (y * y)

    def log_evidence(self):
        if self.sw == 0.0:
            return -np.inf
        return float(self.top + np.log(self.sw) - np.log(self.n))

    def estimates(self):
        if self.sw == 0.0:
            nan = np.full_like(self.shift, np.nan)
            return nan, nan
        m = self.s1 / self.sw
        return self.shift + m, np.maximum(self.s2 / self.sw - m * m, 0.0)


def initial_population(start, C0, p: int, rng: np.random.Generator) -> np.ndarray:
    """``p`` draws from ``N(start, C0)``."""
    start = np.asarray(start, dtype=float)
    L = np.linalg.cholesky(np.asarray(C0, dtype=float))
    return start + rng.standard_normal((p, start.size)) @ L.T


def gris_run(target: TargetModel, cfg: GrisConfig, init, rng: np.random.Generator) -> SampleTrace:
    """Run gradient importance sampling on ``target``.

    Parameters
    ----------
    target : TargetModel
        Its counter is charged; pass a clone to keep the original untouched.
    cfg : GrisConfig
    init : array, shape (p, d)
        Seed population; every point needs a finite log-density.
    rng : numpy Generator

    Returns
    -------
    SampleTrace
    """
    return _run(target, cfg, init, rng, bridge=None)


def tempered_gris_run(target: TargetModel, spec: BridgeSpec, cfg: GrisConfig, init,
                      rng: np.random.Generator) -> SampleTrace:
    """Gradient IS along a bridge ``g_t`` with recycling of the ``f/q`` weights.

    Propagation (resampling and the drift) follows ``g_t``; the recycled
    weights ``f/q`` drive the weighted estimates and the evidence stored in
    the trace.  ``g0`` evaluations are charged to ``spec.g0`` only.
    """
    if spec.g0.dim != target.dim:
        raise ContractError("g0 and target dimensions differ")
    return _run(target, cfg, init, rng, bridge=spec)


def _run(target, cfg: GrisConfig, init, rng, bridge: Optional[BridgeSpec]) -> SampleTrace:
    p, d = cfg.population, target.dim
    init = np.atleast_2d(np.asarray(init, dtype=float))
    if init.shape != (p, d):
        raise ContractError(f"init must have shape ({p}, {d}), got {init.shape}")
    counter = target.counter
    base = counter.count
    budget = cfg.eval_budget
    if budget is not None and budget < p:
        raise ContractError(f"eval budget {budget} cannot cover the {p} seed points")

    state = new_adapt_state(d, t0=p if cfg.t0 is None else cfg.t0, C0=cfg.C0,
                            s_d=cfg.s_d, eps=cfg.eps)

    # S as arrays: point, log f, grad log f, log g0, grad log g0
    S_x = [init]
    logf, grad = counted_eval_batch(target, init)
    bad = ~np.isfinite(logf)
    if bad.any():
        raise ContractError(f"seed point {init[np.argmax(bad)]} has non-finite log-density")
    lg0, gg0 = counted_eval_batch(bridge.g0, init) if bridge is not None else (None, None)
    last = _Pop(init, logf, grad, lg0, gg0)
    state = observe(state, init)

    shift = init.mean(axis=0)
    moments = _Moments(shift)
    wmoments = _WeightedMoments(shift)
    raw_lw, rec_lw, proposed = [], [], []
    checkpoints = []
    stride = cfg.checkpoint_stride
    next_cp = stride
    n_samples = p
    pending = []
    t = 0
    truncated = False
    dc = cfg.drift

    while True:
        if cfg.sample_size is not None and n_samples >= cfg.sample_size + p:
            break
        if budget is not None and counter.count - base + p > budget:
            truncated = counter.count - base < budget
            break
        t += 1
        rho = bridge.rho(t) if bridge is not None else 1.0
        L = state.factor
        anc = rng.integers(p, size=p)
        xa = last.x[anc]
        if bridge is None or rho == 1.0:
            grads = last.grad[anc]
        else:
            grads = bridge_grad(bridge.kind, rho, last.lg0[anc], last.gg0[anc],
                                last.logf[anc], last.grad[anc])
        if dc.delta > 0:
            drifts = (dc.delta / t ** dc.decay_exponent) * grads
            if dc.cap_factor is not None:
                cap = dc.cap_factor * np.sqrt(np.sum(L * L))
                norms = np.sqrt(np.einsum("ij,ij->i", drifts, drifts))
                over = norms > cap
                drifts[over] *= (cap / norms[over])[:, None]
        else:
            drifts = np.zeros_like(xa)
        z = rng.standard_normal((p, d))
        X = xa + drifts + z @ L.T
        # density of each x under the proposal of its own ancestor
        log_q = -0.5 * np.einsum("ij,ij->i", z, z) - np.sum(np.log(np.diag(L))) - 0.5 * d * LOG_2PI

        logf, grad = counted_eval_batch(target, X)
        lw_f = logf - log_q
        if bridge is None or rho == 1.0:
            # past the end of the schedule g0 is never needed again
            lw_prop = lw_f
            lg0 = gg0 = None
        else:
            lg0, gg0 = counted_eval_batch(bridge.g0, X)
            lw_prop = bridge_combine(bridge.kind, rho, lg0, logf) - log_q

        if np.all(lw_prop == -np.inf):
            raise DegeneratePopulationError(
                f"iteration {t}: all {p} proposals have zero weight "
                f"(log f range [{logf.min()}, {logf.max()}])")
        idx = resample(lw_prop, p, rng, cfg.resample_scheme)
        last = _Pop(X[idx], logf[idx], grad[idx],
                    lg0[idx] if lg0 is not None else None,
                    gg0[idx] if gg0 is not None else None)
        S_x.append(last.x)
        n_samples += p
        raw_lw.append(lw_prop)
        rec_lw.append(lw_f)
        proposed.append(X)
        moments.add(last.x)
        wmoments.add(X, lw_f)

        pending.append(last.x)
        if t % cfg.adapt_interval == 0:
            state = observe(state, np.concatenate(pending))
            pending = []

        used = counter.count - base
        if used >= next_cp:
            checkpoints.append(_checkpoint(used, moments, wmoments))
            next_cp = (used // stride + 1) * stride

    used = counter.count - base
    if t > 0 and (not checkpoints or checkpoints[-1].eval_count < used):
        checkpoints.append(_checkpoint(used, moments, wmoments))
    samples = np.concatenate(S_x)[p:]
    empty = np.empty(0)
    return SampleTrace(
        samples=samples,
        raw_log_weights=np.concatenate(raw_lw) if raw_lw else empty,
        recycled_log_weights=np.concatenate(rec_lw) if rec_lw else empty,
        proposed=np.concatenate(proposed) if proposed else np.empty((0, d)),
        checkpoints=checkpoints,
        iterations=t,
        evals=used,
        truncated=truncated,
    )


@dataclass
class _Pop:
    x: np.ndarray
    logf: np.ndarray
    grad: np.ndarray
    lg0: Optional[np.ndarray]
    gg0: Optional[np.ndarray]


def _checkpoint(used, moments, wmoments) -> Checkpoint:
    m, v = moments.estimates()
    wm, wv = wmoments.estimates()
    return Checkpoint(int(used), m, v, wm, wv, wmoments.log_evidence())
