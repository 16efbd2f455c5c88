"""MCMC comparison samplers: AM, MALTA, adaptive T-MALA and HMC.

All chains record a sample at every step (the current point again after a
rejection) and charge their target through :func:`counted_eval`, so that a
run can be stopped at a fixed evaluation budget.

:func:`run_chains` advances a set of replicate chains in lockstep, one array
row per chain, and records running moment estimates at evaluation
checkpoints; :func:`run_chain` is its single-chain case.  The per-step
functions (:func:`am_step` and friends) implement the same kernels for one
chain at a time.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .adapt import AdaptState, _cholesky_jitter, _jitter_for, factorize, new_adapt_state, \
    refresh_factor, update_covariance, update_moments
from .core import ContractError, TargetModel, counted_eval, counted_eval_batch
from .proposal import cap_drift

OPTIMAL_MALA_ACCEPTANCE = 0.574


@dataclass
class MhChainState:
    current: np.ndarray
    current_logf: float
    current_grad: Optional[np.ndarray] = None
    accepted_count: int = 0
    step_count: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_count / self.step_count if self.step_count else 0.0


def init_chain(target: TargetModel, x0, need_grad: bool = False) -> MhChainState:
    x0 = np.array(x0, dtype=float)
    logf, grad = counted_eval(target, x0, need_grad=need_grad)
    return MhChainState(x0, logf, grad)


def _log_accept_ratio(logf_cur, logf_prop, logq_fwd, logq_rev) -> float:
    if logf_prop == -math.inf:
        return -math.inf
    r = logf_prop - logf_cur + logq_rev - logq_fwd
    return -math.inf if r != r else r


def _log_uniform(rng) -> float:
    u = rng.random()
    return math.log(u) if u > 0.0 else -math.inf


def mh_accept(logf_cur, logf_prop, logq_fwd, logq_rev, rng) -> bool:
    """Accept with probability ``min(1, f(x*) q(x|x*) / (f(x) q(x*|x)))``.

    ``logq_fwd`` is the log density of the move current -> proposal,
    ``logq_rev`` of the move back.  One uniform is drawn per call.
    """
    return _log_uniform(rng) < _log_accept_ratio(logf_cur, logf_prop, logq_fwd, logq_rev)


def _accept_with_prob(log_ratio, rng):
    alpha = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
    return _log_uniform(rng) < log_ratio, alpha


def _step_result(state, accepted, x, logf, grad):
    if accepted:
        return MhChainState(x, logf, grad, state.accepted_count + 1, state.step_count + 1)
    return MhChainState(state.current, state.current_logf, state.current_grad,
                        state.accepted_count, state.step_count + 1)


# ---------------------------------------------------------------------------
# Adaptive Metropolis


def am_step(target: TargetModel, state: MhChainState, adapt: AdaptState, rng,
            refresh: bool = True):
    """Random-walk Metropolis with proposal ``N(current, C_t)``.

    The recorded sample (the new point, or the old one after rejection) is
    absorbed into ``adapt``; the Cholesky factor is refreshed when
    ``refresh`` is true.  Returns ``(state, adapt)``.
    """
    x = state.current + adapt.factor @ rng.standard_normal(target.dim)
    logf, _ = counted_eval(target, x)
    accepted = mh_accept(state.current_logf, logf, 0.0, 0.0, rng)
    state = _step_result(state, accepted, x, logf, None)
    adapt = (update_moments(adapt, state.current) if adapt.t == 0
             else update_covariance(adapt, state.current))
    if refresh:
        adapt = refresh_factor(adapt)
    return state, adapt


# ---------------------------------------------------------------------------
# MALTA


def _gauss_logq(x, mean, L_inv):
    z = L_inv @ (x - mean)
    return -0.5 * (z @ z)


def malta_proposal_mean(x, grad, delta, L, cap_factor=10.0):
    return np.asarray(x, dtype=float) + cap_drift(delta * np.asarray(grad, dtype=float), L, cap_factor)


def malta_step(target: TargetModel, state: MhChainState, L, delta: float, rng,
               cap_factor: Optional[float] = 10.0, L_inv=None) -> MhChainState:
    """Langevin proposal ``N(x + delta grad log f(x), C)`` with ``C = L L^T`` fixed.

    The drift is capped at ``cap_factor * sqrt(trace C)``.  Normalizing
    constants of the two proposal densities cancel and are omitted.
    ``L_inv`` may be passed to avoid re-inverting the fixed factor.
    """
    if state.current_grad is None:
        raise ContractError("MALTA needs the gradient at the current state")
    fwd_mean = malta_proposal_mean(state.current, state.current_grad, delta, L, cap_factor)
    x = fwd_mean + L @ rng.standard_normal(target.dim)
    logf, grad = counted_eval(target, x, need_grad=True)
    if delta == 0.0 or not math.isfinite(logf):
        # symmetric kernel: the proposal densities cancel exactly
        logq_fwd = logq_rev = 0.0
    else:
        L_inv = np.linalg.inv(L) if L_inv is None else L_inv
        logq_fwd = _gauss_logq(x, fwd_mean, L_inv)
        logq_rev = _gauss_logq(state.current, malta_proposal_mean(x, grad, delta, L, cap_factor),
                               L_inv)
    accepted = mh_accept(state.current_logf, logf, logq_fwd, logq_rev, rng)
    return _step_result(state, accepted, x, logf, grad)


# ---------------------------------------------------------------------------
# adaptive T-MALA


@dataclass
class TmalaAdaptState:
    cov: np.ndarray
    mean: np.ndarray
    s_d: float
    A1: float = 1e4
    delta: float = 1.0
    t: int = 0
    cap_factor: Optional[float] = 10.0
    target_accept: float = OPTIMAL_MALA_ACCEPTANCE
    gain_exponent: float = 0.6
    s_d_min: float = 1e-4
    refresh_interval: int = 1
    # proposal covariance s_d * cov as of the last refresh, its factor and inverse
    prop_cov: Optional[np.ndarray] = None
    factor: Optional[np.ndarray] = None
    factor_inv: Optional[np.ndarray] = None

    def refresh(self) -> "TmalaAdaptState":
        C = self.s_d * self.cov
        L = _cholesky_jitter(C, _jitter_for(C))
        return replace(self, prop_cov=C, factor=L, factor_inv=np.linalg.inv(L))


def new_tmala_state(dim: int, x0, C0=None, s_d: Optional[float] = None, A1: float = 1e4,
                    delta: float = 1.0, cap_factor: Optional[float] = 10.0,
                    refresh_interval: int = 1) -> TmalaAdaptState:
    C0 = np.eye(dim) if C0 is None else np.array(C0, dtype=float)
    s_d = 2.38 ** 2 / dim if s_d is None else float(s_d)
    return TmalaAdaptState(cov=frobenius_project(C0, A1), mean=np.array(x0, dtype=float),
                           s_d=min(max(s_d, 1e-4), A1), A1=A1, delta=delta,
                           cap_factor=cap_factor, refresh_interval=refresh_interval).refresh()


def frobenius_project(C, A1: float) -> np.ndarray:
    """Scale ``C`` onto the Frobenius ball of radius ``A1`` if outside it."""
    if A1 <= 0:
        raise ContractError("A1 must be positive")
    C = np.asarray(C, dtype=float)
    norm = math.sqrt(np.sum(C * C))
    if norm <= A1:
        return C
    return C * (A1 / norm)


def tmala_proposal_mean(x, grad, C, delta, cap_factor, L):
    """``x + (C/2) D(x)`` with ``D`` the capped drift ``delta * grad``."""
    D = cap_drift(delta * np.asarray(grad, dtype=float), L, cap_factor)
    return np.asarray(x, dtype=float) + 0.5 * (C @ D)


def tmala_step(target: TargetModel, state: MhChainState, tstate: TmalaAdaptState, rng,
               drift_fn: Optional[Callable] = None):
    """One adaptive T-MALA step followed by the stochastic-approximation update.

    The proposal is ``N(x + (C/2) D(x), C)`` with ``C = s_d * cov`` and ``D``
    the capped drift ``delta * grad log f``.  ``drift_fn(x, grad)`` replaces
    ``D`` (test doubles).  Returns ``(state, tstate)``.
    """
    if state.current_grad is None:
        raise ContractError("T-MALA needs the gradient at the current state")
    C, L = tstate.prop_cov, tstate.factor
    cap = None if tstate.cap_factor is None else tstate.cap_factor * math.sqrt(np.sum(L * L))

    def D(x, g):
        if drift_fn is not None:
            return np.asarray(drift_fn(x, g), dtype=float)
        if tstate.delta == 0.0:
            return None
        v = tstate.delta * g
        if cap is not None:
            n = math.sqrt(v @ v)
            if n > cap:
                v = v * (cap / n)
        return v

    d_cur = D(state.current, state.current_grad)
    fwd_mean = state.current if d_cur is None else state.current + 0.5 * (C @ d_cur)
    x = fwd_mean + L @ rng.standard_normal(target.dim)
    logf, grad = counted_eval(target, x, need_grad=True)
    if not math.isfinite(logf):
        log_ratio = -math.inf
    else:
        d_new = D(x, grad)
        if d_cur is None and d_new is None:
            logq_fwd = logq_rev = 0.0
        else:
            rev_mean = x if d_new is None else x + 0.5 * (C @ d_new)
            logq_fwd = _gauss_logq(x, fwd_mean, tstate.factor_inv)
            logq_rev = _gauss_logq(state.current, rev_mean, tstate.factor_inv)
        log_ratio = _log_accept_ratio(state.current_logf, logf, logq_fwd, logq_rev)
    accepted, alpha = _accept_with_prob(log_ratio, rng)
    state = _step_result(state, accepted, x, logf, grad)
    return state, tmala_adapt(tstate, state.current, alpha)


def tmala_adapt(tstate: TmalaAdaptState, x, alpha: float) -> TmalaAdaptState:
    """Robbins-Monro update of mean, covariance and ``s_d`` with projections.

    With gain ``g = (t + 1)**-0.6`` for the ``t``-th update (a unit first
    gain would discard the initial covariance): ``mean += g (x - mean)``,
    ``cov += g ((x - mean)(x - mean)^T - cov)`` projected onto the Frobenius
    ball of radius ``A1``, and ``s_d += g (alpha - 0.574)`` clipped to
    ``[s_d_min, A1]``.
    """
    t = tstate.t + 1
    gamma = (t + 1) ** -tstate.gain_exponent
    r = x - tstate.mean
    mean = tstate.mean + gamma * r
    cov = frobenius_project((1.0 - gamma) * tstate.cov + gamma * (r[:, None] * r), tstate.A1)
    s_d = tstate.s_d + gamma * (alpha - tstate.target_accept)
    s_d = min(max(s_d, tstate.s_d_min), tstate.A1)
    new = copy.copy(tstate)
    new.t, new.mean, new.cov, new.s_d = t, mean, cov, s_d
    if t % tstate.refresh_interval == 0:
        new = new.refresh()
    return new


# ---------------------------------------------------------------------------
# HMC


@dataclass
class HmcConfig:
    step_size: float = 0.1
    n_leapfrog: int = 10
    mass: Optional[np.ndarray] = None   # diagonal; identity by default

    def __post_init__(self):
        if self.step_size <= 0:
            raise ContractError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ContractError("n_leapfrog must be >= 1")


def leapfrog(x, momentum, grad_fn, step_size: float, n_steps: int, inv_mass=None,
             grad0=None):
    """Leapfrog integration of ``H = -log f(x) + p^T M^-1 p / 2``.

    ``grad_fn(x)`` returns ``grad log f(x)``; ``grad0`` reuses a known
    gradient at the start point.  Returns ``(x, p, grad_at_x, ok)`` where
    ``ok`` is false once a non-finite gradient or position shows up.
    """
    if n_steps < 0:
        raise ContractError("n_steps must be >= 0")
    x = np.array(x, dtype=float)
    p = np.array(momentum, dtype=float)
    if n_steps == 0:
        return x, p, grad0, True
    inv_mass = np.ones_like(x) if inv_mass is None else np.asarray(inv_mass, dtype=float)
    g = grad_fn(x) if grad0 is None else grad0
    p = p + 0.5 * step_size * g
    for i in range(n_steps):
        x = x + step_size * inv_mass * p
        g = grad_fn(x)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(x))):
            return x, p, g, False
        if i < n_steps - 1:
            p = p + step_size * g
    p = p + 0.5 * step_size * g
    return x, p, g, True


def hmc_step(target: TargetModel, state: MhChainState, cfg: HmcConfig, rng) -> MhChainState:
    """Momentum refresh, ``n_leapfrog`` steps, accept with ``min(1, exp(-dH))``."""
    if state.current_grad is None:
        raise ContractError("HMC needs the gradient at the current state")
    d = target.dim
    mass = np.ones(d) if cfg.mass is None else np.asarray(cfg.mass, dtype=float)
    inv_mass = 1.0 / mass
    p0 = np.sqrt(mass) * rng.standard_normal(d)

    def grad_fn(x):
        return counted_eval(target, x, need_grad=True)[1]

    x, p, g, ok = leapfrog(state.current, p0, grad_fn, cfg.step_size, cfg.n_leapfrog,
                           inv_mass, grad0=state.current_grad)
    if ok:
        logf, _ = counted_eval(target, x, need_grad=True)   # cache hit
        h_old = -state.current_logf + 0.5 * np.sum(inv_mass * p0 * p0)
        h_new = -logf + 0.5 * np.sum(inv_mass * p * p)
        accepted = mh_accept(-h_old, -h_new, 0.0, 0.0, rng)
    else:
        logf = -np.inf
        rng.random()
        accepted = False
    return _step_result(state, accepted, x, logf, g)


# ---------------------------------------------------------------------------
# chain driver


@dataclass
class AmConfig:
    t0: int = 100
    C0: Optional[np.ndarray] = None
    s_d: Optional[float] = None
    eps: float = 1e-6
    adapt_interval: int = 1


@dataclass
class MaltaConfig:
    delta: float = 0.5
    C: Optional[np.ndarray] = None    # defaults to (2.38^2 / d) I
    cap_factor: Optional[float] = 10.0


@dataclass
class TmalaConfig:
    delta: float = 1.0
    C0: Optional[np.ndarray] = None
    s_d: Optional[float] = None
    A1: float = 1e4
    cap_factor: Optional[float] = 10.0
    refresh_interval: int = 1


@dataclass
class ChainCheckpoint:
    eval_count: int
    mean: np.ndarray
    var: np.ndarray


@dataclass
class ChainTrace:
    samples: np.ndarray
    checkpoints: list
    evals: int
    acceptance_rate: float
    extra: dict = field(default_factory=dict)


def run_chain(kind: str, target: TargetModel, x0, rng, eval_budget: int,
              config=None, checkpoint_stride: int = 100) -> ChainTrace:
    """Run one of ``am``, ``malta``, ``tmala``, ``hmc`` until the budget is spent.

    The start point costs one evaluation.  Running mean and variance of the
    recorded samples (start point included) are stored whenever the
    evaluation count passes a multiple of ``checkpoint_stride``, and once
    more at the end.  This is :func:`run_chains` with a single chain.
    """
    return run_chains(kind, target, x0, [rng], eval_budget, config, checkpoint_stride)[0]


# ---------------------------------------------------------------------------
# lockstep driver

NOISE_CHUNK = 256


class ChainNoise:
    """Per-chain Gaussian and uniform draws, generated in fixed-size chunks.

    Each step consumes ``width`` standard normals and one uniform per chain.
    Chain ``r`` draws only from ``rngs[r]`` and always in chunks of
    :data:`NOISE_CHUNK`, so its noise does not depend on how many chains run
    alongside it.
    """

    def __init__(self, rngs, width: int):
        self.rngs = list(rngs)
        self.width = width
        self._pos = NOISE_CHUNK

    def draw(self):
        if self._pos == NOISE_CHUNK:
            self._z = np.stack([g.standard_normal((NOISE_CHUNK, self.width)) for g in self.rngs], 1)
            self._u = np.stack([g.random(NOISE_CHUNK) for g in self.rngs], 1)
            self._pos = 0
        k = self._pos
        self._pos += 1
        return self._z[k], self._u[k]


def _batch_cholesky(C):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return np.stack([_cholesky_jitter(c, _jitter_for(c)) for c in C])


def _cap_rows(V, cap):
    """Rescale rows of ``V`` whose norm exceeds ``cap`` (scalar or per row)."""
    if cap is None:
        return V
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))
    scale = np.minimum(1.0, cap / np.where(norms > 0, norms, 1.0))
    return V * scale[:, None]


def _accept_rows(log_ratio, u):
    log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
    with np.errstate(divide="ignore"):
        return np.log(u) < log_ratio, log_ratio


def _matvec(M, V):
    return np.einsum("rij,rj->ri", M, V)


class _Chains:
    """State of ``R`` chains advanced in lockstep."""

    def __init__(self, x, logf, grad):
        self.x, self.logf, self.grad = x, logf, grad
        self.accepted = np.zeros(x.shape[0], dtype=np.int64)
        self.steps = 0

    def update(self, accept, x, logf, grad):
        self.x = np.where(accept[:, None], x, self.x)
        self.logf = np.where(accept, logf, self.logf)
        if grad is not None:
            self.grad = np.where(accept[:, None], grad, self.grad)
        self.accepted += accept
        self.steps += 1


class _AmKernel:
    cost = 1

    def __init__(self, target, chains, cfg: AmConfig, noise_width):
        d = target.dim
        R = chains.x.shape[0]
        tmpl = new_adapt_state(d, t0=cfg.t0, C0=cfg.C0, s_d=cfg.s_d, eps=cfg.eps)
        self.target, self.cfg, self.tmpl = target, cfg, tmpl
        self.t = 1
        self.mean = chains.x.copy()
        self.cov = np.broadcast_to(tmpl.cov, (R, d, d)).copy()
        self.L0 = np.broadcast_to(tmpl.factor, (R, d, d))
        self.L = self.L0

    def step(self, ch, z, u):
        x = ch.x + _matvec(self.L, z)
        logf, _ = counted_eval_batch(self.target, x)
        accept, _ = _accept_rows(logf - ch.logf, u)
        ch.update(accept, x, logf, None)
        self._absorb(ch.x)
        if ch.steps % self.cfg.adapt_interval == 0:
            self.L = self.L0 if self.t <= self.tmpl.t0 else _batch_cholesky(self.cov)

    def _absorb(self, x):
        # the covariance recursion of adapt.update_covariance, one row per chain
        t, s_d, eps = self.t, self.tmpl.s_d, self.tmpl.eps
        m_old = self.mean
        m_new = m_old + (x - m_old) / (t + 1)
        inner = (t * (m_old[:, :, None] * m_old[:, None, :])
                 - (t + 1) * (m_new[:, :, None] * m_new[:, None, :]) + x[:, :, None] * x[:, None, :])
        d = x.shape[1]
        inner[:, range(d), range(d)] += eps
        self.cov = ((t - 1) / t) * self.cov + (s_d / t) * inner
        self.mean = m_new
        self.t = t + 1

    def extra(self, r):
        return {"cov": self.tmpl.C0 if self.t <= self.tmpl.t0 else self.cov[r]}


class _MaltaKernel:
    cost = 1

    def __init__(self, target, chains, cfg: MaltaConfig, noise_width):
        d = target.dim
        C = (2.38 ** 2 / d) * np.eye(d) if cfg.C is None else np.asarray(cfg.C, dtype=float)
        self.target, self.delta = target, cfg.delta
        self.L = factorize(C)
        self.L_inv = np.linalg.inv(self.L)
        self.cap = None if cfg.cap_factor is None else cfg.cap_factor * math.sqrt(np.sum(self.L ** 2))

    def step(self, ch, z, u):
        fwd = ch.x + _cap_rows(self.delta * ch.grad, self.cap)
        x = fwd + z @ self.L.T
        logf, grad = counted_eval_batch(self.target, x)
        log_ratio = logf - ch.logf
        if self.delta != 0.0:
            rev = x + _cap_rows(self.delta * grad, self.cap)
            zf = (x - fwd) @ self.L_inv.T
            zr = (ch.x - rev) @ self.L_inv.T
            with np.errstate(invalid="ignore"):
                log_ratio = log_ratio + 0.5 * (np.einsum("ij,ij->i", zf, zf)
                                               - np.einsum("ij,ij->i", zr, zr))
        log_ratio[logf == -np.inf] = -np.inf
        accept, _ = _accept_rows(log_ratio, u)
        ch.update(accept, x, logf, grad)

    def extra(self, r):
        return {}


class _TmalaKernel:
    cost = 1

    def __init__(self, target, chains, cfg: TmalaConfig, noise_width):
        d = target.dim
        R = chains.x.shape[0]
        tmpl = new_tmala_state(d, chains.x[0], C0=cfg.C0, s_d=cfg.s_d, A1=cfg.A1,
                               delta=cfg.delta, cap_factor=cfg.cap_factor,
                               refresh_interval=cfg.refresh_interval)
        self.target, self.tmpl = target, tmpl
        self.t = 0
        self.mean = chains.x.copy()
        self.cov = np.broadcast_to(tmpl.cov, (R, d, d)).copy()
        self.s_d = np.full(R, tmpl.s_d)
        self.C = np.broadcast_to(tmpl.prop_cov, (R, d, d))
        self.L = np.broadcast_to(tmpl.factor, (R, d, d))
        self.L_inv = np.broadcast_to(tmpl.factor_inv, (R, d, d))
        self._set_cap()

    def _set_cap(self):
        cf = self.tmpl.cap_factor
        self.cap = None if cf is None else cf * np.sqrt(np.sum(self.L ** 2, axis=(1, 2)))

    def _drift(self, grad):
        return _cap_rows(self.tmpl.delta * grad, self.cap)

    def step(self, ch, z, u):
        fwd = ch.x + 0.5 * _matvec(self.C, self._drift(ch.grad))
        x = fwd + _matvec(self.L, z)
        logf, grad = counted_eval_batch(self.target, x)
        rev = x + 0.5 * _matvec(self.C, self._drift(grad))
        zf = _matvec(self.L_inv, x - fwd)
        zr = _matvec(self.L_inv, ch.x - rev)
        with np.errstate(invalid="ignore"):
            log_ratio = logf - ch.logf + 0.5 * (np.einsum("ij,ij->i", zf, zf)
                                                 - np.einsum("ij,ij->i", zr, zr))
        log_ratio[logf == -np.inf] = -np.inf
        accept, log_ratio = _accept_rows(log_ratio, u)
        ch.update(accept, x, logf, grad)
        alpha = np.exp(np.minimum(log_ratio, 0.0))
        self._adapt(ch.x, alpha)

    def _adapt(self, x, alpha):
        # tmala_adapt, one row per chain
        ts = self.tmpl
        self.t += 1
        gamma = (self.t + 1) ** -ts.gain_exponent
        r = x - self.mean
        self.mean = self.mean + gamma * r
        cov = (1.0 - gamma) * self.cov + gamma * (r[:, :, None] * r[:, None, :])
        norms = np.sqrt(np.sum(cov * cov, axis=(1, 2)))
        self.cov = cov * (ts.A1 / np.maximum(norms, ts.A1))[:, None, None]
        self.s_d = np.clip(self.s_d + gamma * (alpha - ts.target_accept), ts.s_d_min, ts.A1)
        if self.t % ts.refresh_interval == 0:
            self.C = self.s_d[:, None, None] * self.cov
            self.L = _batch_cholesky(self.C)
            self.L_inv = np.linalg.inv(self.L)
            self._set_cap()

    def extra(self, r):
        return {"s_d": float(self.s_d[r]), "cov": self.cov[r]}


class _HmcKernel:
    def __init__(self, target, chains, cfg: HmcConfig, noise_width):
        d = target.dim
        self.target, self.cfg = target, cfg
        mass = np.ones(d) if cfg.mass is None else np.asarray(cfg.mass, dtype=float)
        self.inv_mass = 1.0 / mass
        self.sqrt_mass = np.sqrt(mass)
        self.cost = cfg.n_leapfrog

    def step(self, ch, z, u):
        eps, inv_mass = self.cfg.step_size, self.inv_mass
        p0 = self.sqrt_mass * z
        x = ch.x
        p = p0 + 0.5 * eps * ch.grad
        ok = np.ones(x.shape[0], dtype=bool)
        with np.errstate(all="ignore"):
            for i in range(self.cfg.n_leapfrog):
                x = x + eps * inv_mass * p
                logf, g = counted_eval_batch(self.target, x)
                ok &= np.isfinite(g).all(axis=1) & np.isfinite(x).all(axis=1)
                p = p + (eps if i < self.cfg.n_leapfrog - 1 else 0.5 * eps) * g
            h_old = -ch.logf + 0.5 * np.sum(inv_mass * p0 * p0, axis=1)
            h_new = -logf + 0.5 * np.sum(inv_mass * p * p, axis=1)
            log_ratio = np.where(ok, h_old - h_new, -np.inf)
        accept, _ = _accept_rows(log_ratio, u)
        ch.update(accept, x, logf, g)

    def extra(self, r):
        return {}


_KERNELS = {
    "am": (_AmKernel, AmConfig),
    "malta": (_MaltaKernel, MaltaConfig),
    "tmala": (_TmalaKernel, TmalaConfig),
    "hmc": (_HmcKernel, HmcConfig),
}


def run_chains(kind: str, target: TargetModel, x0, rngs, eval_budget: int,
               config=None, checkpoint_stride: int = 100) -> list:
    """Advance one chain per generator in ``rngs`` in lockstep.

    Every chain starts at ``x0`` and spends ``eval_budget`` evaluations; the
    shared ``target`` counter is charged for all of them.  Chain ``r`` is a
    function of ``rngs[r]`` alone, so running a set of replicates together or
    one at a time gives the same traces.

    Returns
    -------
    list of ChainTrace
    """
    if kind not in _KERNELS:
        raise ContractError(f"unknown chain kind {kind!r}")
    if eval_budget < 1:
        raise ContractError("eval budget must be positive")
    if checkpoint_stride < 1:
        raise ContractError("checkpoint_stride must be positive")
    kernel_cls, cfg_cls = _KERNELS[kind]
    cfg = config if config is not None else cfg_cls()
    d = target.dim
    R = len(rngs)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (d,):
        raise ContractError(f"start point has shape {x0.shape}, target expects ({d},)")
    counter = target.counter
    base = counter.count

    X0 = np.broadcast_to(x0, (R, d)).copy()
    logf, grad = counted_eval_batch(target, X0)
    if not np.isfinite(logf[0]):
        raise ContractError(f"start point {x0} has non-finite log-density")
    chains = _Chains(X0, logf, grad)
    kernel = kernel_cls(target, chains, cfg, d)
    cost = kernel.cost
    noise = ChainNoise(rngs, d)

    n_max = 1 + max(0, (eval_budget - 1) // cost)
    samples = np.empty((n_max, R, d))
    samples[0] = X0
    shift = x0
    s1 = np.zeros((R, d))
    s2 = np.zeros((R, d))
    cps = []
    next_cp = checkpoint_stride
    used = 1

    def snapshot():
        n = chains.steps + 1
        m = s1 / n
        return used, shift + m, np.maximum(s2 / n - m * m, 0.0)

    while chains.steps + 1 < n_max:
        z, u = noise.draw()
        kernel.step(chains, z, u)
        used += cost
        y = chains.x - shift
        s1 += y
        s2 += y * y
        samples[chains.steps] = chains.x
        if used >= next_cp:
            cps.append(snapshot())
            next_cp = (used // checkpoint_stride + 1) * checkpoint_stride
    if not cps or cps[-1][0] < used:
        cps.append(snapshot())
    assert counter.count - base == R * used
    n = chains.steps + 1
    rate = chains.accepted / chains.steps if chains.steps else np.zeros(R)
    return [
        ChainTrace(samples[:n, r].copy(),
                   [ChainCheckpoint(u_, m[r].copy(), v[r].copy()) for u_, m, v in cps],
                   used, float(rate[r]), kernel.extra(r))
        for r in range(R)
    ]
