"""Benchmark targets with analytic gradients, plus ground-truth tooling.

* ``gaussian_grid``: 25 bivariate Gaussians on a 5x5 lattice, weights
  decaying with distance from the origin.
* ``banana``: ``log f = -x1^2/(2s) - (x2 - b(x1^2 - s))^2 / 2``.
* ``t_mixture``: three 10-D Student-t components with inverse-Wishart scales.
* ``logreg_posterior``: Bayesian logistic regression on the German credit
  data (24 standardized attributes plus an intercept).

Synthetic targets carry their analytic mean and covariance in
``target.info``.  The logistic posterior gets its ground truth from
:func:`defensive_is_ground_truth` around a :func:`laplace_approx`.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit, gammaln, logsumexp

from .core import ContractError, TargetModel

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class IngestionError(ValueError):
    pass


class LaplaceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Gaussian (test double and building block)


def gaussian(mean, cov, log_scale: float = 0.0, name: str = "gaussian") -> TargetModel:
    """``exp(log_scale) * N(mean, cov)``; the evidence is ``log_scale``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.size
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + prec.T)
    const = log_scale - 0.5 * (d * LOG_2PI + np.linalg.slogdet(cov)[1])

    def logf(x):
        r = x - mean
        return const - 0.5 * (r @ prec @ r)

    def logf_grad(x):
        r = x - mean
        pr = prec @ r
        return const - 0.5 * (r @ pr), -pr

    def batch(X):
        R = X - mean
        PR = R @ prec
        return const - 0.5 * np.einsum("ij,ij->i", R, PR), -PR

    return TargetModel(d, logf, logf_grad, name=name,
                       info={"mean": mean, "cov": cov, "log_evidence": float(log_scale)},
                       batch_log_density_and_grad=batch)


def _gaussian_logpdf_rows(X, mean, chol):
    z = solve_triangular(chol, np.atleast_2d(X - mean).T, lower=True).T
    d = mean.size
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(np.diag(chol))) - 0.5 * d * LOG_2PI


# ---------------------------------------------------------------------------
# Gaussian grid


@dataclass
class GaussianGridSpec:
    grid_side: int = 5
    spacing: float = 3.0
    component_cov: np.ndarray = field(default_factory=lambda: np.eye(2))
    weight_decay: float = 4.0

    def means(self) -> np.ndarray:
        k = np.arange(self.grid_side) - (self.grid_side - 1) / 2
        gx, gy = np.meshgrid(k, k, indexing="ij")
        return self.spacing * np.column_stack([gx.ravel(), gy.ravel()])

    def log_weights(self) -> np.ndarray:
        mu = self.means()
        lw = -np.sqrt(np.sum(mu * mu, axis=1)) / self.weight_decay
        return lw - logsumexp(lw)


def gaussian_grid(spec: Optional[GaussianGridSpec] = None) -> TargetModel:
    spec = spec or GaussianGridSpec()
    mu = spec.means()
    lw = spec.log_weights()
    w = np.exp(lw)
    cov = np.asarray(spec.component_cov, dtype=float)
    prec = np.linalg.inv(cov)
    lc = lw - 0.5 * (2 * LOG_2PI + np.linalg.slogdet(cov)[1])

    def terms(x):
        r = x - mu
        pr = r @ prec
        return lc - 0.5 * np.einsum("ij,ij->i", pr, r), pr

    def logf(x):
        return logsumexp(terms(x)[0])

    def logf_grad(x):
        a, pr = terms(x)
        top = logsumexp(a)
        resp = np.exp(a - top)
        return top, -(resp @ pr)

    def batch(X):
        r = X[:, None, :] - mu
        pr = r @ prec
        a = lc - 0.5 * np.einsum("nkj,nkj->nk", pr, r)
        top = logsumexp(a, axis=1)
        resp = np.exp(a - top[:, None])
        return top, -np.einsum("nk,nkj->nj", resp, pr)

    mean = w @ mu
    second = np.einsum("k,ki,kj->ij", w, mu, mu) + cov
    return TargetModel(2, logf, logf_grad, name="gaussian_grid",
                       info={"mean": mean, "cov": second - np.outer(mean, mean),
                             "log_evidence": 0.0, "component_means": mu, "weights": w},
                       batch_log_density_and_grad=batch)


# ---------------------------------------------------------------------------
# Banana


@dataclass
class BananaSpec:
    b: float = 0.03
    s: float = 100.0

    def __post_init__(self):
        if self.s <= 0:
            raise ContractError("banana scale s must be positive")


def banana(spec: Optional[BananaSpec] = None) -> TargetModel:
    spec = spec or BananaSpec()
    b, s = spec.b, spec.s

    def logf(x):
        u = x[1] - b * (x[0] * x[0] - s)
        return -x[0] * x[0] / (2 * s) - 0.5 * u * u

    def logf_grad(x):
        u = x[1] - b * (x[0] * x[0] - s)
        g = np.array([-x[0] / s + 2 * b * x[0] * u, -u])
        return -x[0] * x[0] / (2 * s) - 0.5 * u * u, g

    def batch(X):
        x1 = X[:, 0]
        u = X[:, 1] - b * (x1 * x1 - s)
        g = np.column_stack([-x1 / s + 2 * b * x1 * u, -u])
        return -x1 * x1 / (2 * s) - 0.5 * u * u, g

    info = {
        "mean": np.zeros(2),
        "cov": np.diag([s, 1 + 2 * b * b * s * s]),
        # integral of the unnormalized density: sqrt(2 pi s) * sqrt(2 pi)
        "log_evidence": float(0.5 * np.log(2 * np.pi * s) + 0.5 * LOG_2PI),
    }
    return TargetModel(2, logf, logf_grad, name="banana", info=info,
                       batch_log_density_and_grad=batch)


# ---------------------------------------------------------------------------
# Mixture of multivariate t


@dataclass
class TMixtureSpec:
    n_components: int = 3
    dim: int = 10
    dof: float = 10.0
    gen_seed: int = 1
    means: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dof <= 2:
            raise ContractError("t-mixture needs dof > 2 for finite covariance")
        if self.means is None or self.scales is None or self.weights is None:
            means, scales, weights = generate_t_mixture_instance(
                self.gen_seed, self.n_components, self.dim)
            self.means = means if self.means is None else self.means
            self.scales = scales if self.scales is None else self.scales
            self.weights = weights if self.weights is None else self.weights
        self.means = np.asarray(self.means, dtype=float)
        self.scales = np.asarray(self.scales, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.n_components, self.dim = self.means.shape
        if not np.isclose(self.weights.sum(), 1.0) or np.any(self.weights <= 0):
            raise ContractError("mixture weights must be positive and sum to 1")


def generate_t_mixture_instance(gen_seed: int, n_components: int = 3, dim: int = 10):
    """Pinned synthetic instance: uniform means, inverse-Wishart(I, dim) scales.

    Means are uniform on ``[-5, 5]^dim``; weights are ``(0.5, 0.3, 0.2)`` for
    three components and uniform otherwise.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(gen_seed)))
    means = rng.uniform(-5.0, 5.0, size=(n_components, dim))
    iw = stats.invwishart(df=dim, scale=np.eye(dim))
    scales = np.array([iw.rvs(random_state=rng) for _ in range(n_components)]).reshape(
        n_components, dim, dim)
    scales = 0.5 * (scales + np.transpose(scales, (0, 2, 1)))
    weights = (np.array([0.5, 0.3, 0.2]) if n_components == 3
               else np.full(n_components, 1.0 / n_components))
    return means, scales, weights


def t_mixture(spec: Optional[TMixtureSpec] = None) -> TargetModel:
    spec = spec or TMixtureSpec()
    nu, d, K = spec.dof, spec.dim, spec.n_components
    precs = np.array([np.linalg.inv(S) for S in spec.scales])
    precs = 0.5 * (precs + np.transpose(precs, (0, 2, 1)))
    logdets = np.array([np.linalg.slogdet(S)[1] for S in spec.scales])
    lc = (np.log(spec.weights) + gammaln((nu + d) / 2) - gammaln(nu / 2)
          - 0.5 * d * np.log(nu * np.pi) - 0.5 * logdets)
    mu = spec.means

    def terms(x):
        r = x - mu
        pr = np.einsum("kij,kj->ki", precs, r)
        q = np.einsum("ki,ki->k", pr, r)
        return lc - 0.5 * (nu + d) * np.log1p(q / nu), pr, q

    def logf(x):
        return logsumexp(terms(x)[0])

    def logf_grad(x):
        a, pr, q = terms(x)
        top = logsumexp(a)
        resp = np.exp(a - top)
        coef = resp * (nu + d) / (nu + q)
        return top, -(coef @ pr)

    def batch(X):
        r = X[:, None, :] - mu
        pr = np.einsum("kij,nkj->nki", precs, r)
        q = np.einsum("nki,nki->nk", pr, r)
        a = lc - 0.5 * (nu + d) * np.log1p(q / nu)
        top = logsumexp(a, axis=1)
        coef = np.exp(a - top[:, None]) * (nu + d) / (nu + q)
        return top, -np.einsum("nk,nki->ni", coef, pr)

    w = spec.weights
    mean = w @ mu
    second = np.einsum("k,kij->ij", w, nu / (nu - 2) * spec.scales + np.einsum("ki,kj->kij", mu, mu))
    return TargetModel(d, logf, logf_grad, name="t_mixture",
                       info={"mean": mean, "cov": second - np.outer(mean, mean),
                             "log_evidence": 0.0, "component_means": mu, "weights": w},
                       batch_log_density_and_grad=batch)


# ---------------------------------------------------------------------------
# Logistic regression on German credit


@dataclass
class LogRegModel:
    X: np.ndarray
    y: np.ndarray
    prior_var: float = 100.0

    @property
    def dim(self) -> int:
        return self.X.shape[1]


GERMAN_CREDIT_FILE = "german_credit_numeric.txt"


def german_credit_path(path=None) -> Path:
    """Resolve the dataset: explicit path, then ``$GRIS_DATA_DIR``, then ``data/``."""
    if path is not None:
        return Path(path)
    env = os.environ.get("GRIS_DATA_DIR")
    if env:
        return Path(env) / GERMAN_CREDIT_FILE
    return Path(__file__).resolve().parents[2] / "data" / GERMAN_CREDIT_FILE


def load_german_credit(path=None, prior_var: float = 100.0, n_rows: int = 1000) -> LogRegModel:
    """Read 1000 whitespace-separated rows of 24 attributes and a 1/2 label.

    Attributes are standardized to zero mean and unit variance and an
    intercept column is appended; labels map 1 (good) -> 0, 2 (bad) -> 1.
    """
    path = german_credit_path(path)
    if not path.exists():
        raise FileNotFoundError(f"German credit file not found: {path} (set GRIS_DATA_DIR)")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 25:
                raise IngestionError(f"{path}:{lineno}: expected 25 fields, got {len(parts)}")
            try:
                vals = [float(v) for v in parts]
            except ValueError as e:
                raise IngestionError(f"{path}:{lineno}: {e}") from None
            if vals[-1] not in (1.0, 2.0):
                raise IngestionError(f"{path}:{lineno}: label must be 1 or 2, got {parts[-1]}")
            rows.append(vals)
    if len(rows) != n_rows:
        raise IngestionError(f"{path}: expected {n_rows} rows, got {len(rows)}")
    data = np.array(rows)
    A = data[:, :24]
    sd = A.std(axis=0)
    if np.any(sd == 0):
        raise IngestionError(f"{path}: constant attribute column(s) {np.flatnonzero(sd == 0)}")
    A = (A - A.mean(axis=0)) / sd
    X = np.column_stack([A, np.ones(len(A))])
    y = (data[:, 24] == 2.0).astype(float)
    return LogRegModel(X, y, prior_var)


def logreg_posterior(model: LogRegModel) -> TargetModel:
    X, y, pv = model.X, model.y, model.prior_var

    def logf(beta):
        z = X @ beta
        return y @ z - np.sum(np.logaddexp(0.0, z)) - (beta @ beta) / (2 * pv)

    def logf_grad(beta):
        z = X @ beta
        val = y @ z - np.sum(np.logaddexp(0.0, z)) - (beta @ beta) / (2 * pv)
        return val, X.T @ (y - expit(z)) - beta / pv

    def batch(B):
        Z = X @ B.T
        val = y @ Z - np.sum(np.logaddexp(0.0, Z), axis=0) - np.sum(B * B, axis=1) / (2 * pv)
        return val, (y[:, None] - expit(Z)).T @ X - B / pv

    return TargetModel(model.dim, logf, logf_grad, name="logreg", info={"prior_var": pv},
                       batch_log_density_and_grad=batch)


# ---------------------------------------------------------------------------
# Laplace approximation and defensive importance sampling


def laplace_approx(target: TargetModel, x0, tol: float = 1e-8, max_iter: int = 20000):
    """Mode by gradient ascent (Barzilai-Borwein steps, Armijo backtracking)
    and covariance from a central-difference Hessian of the gradient."""
    x = np.array(x0, dtype=float)
    f, g = target.log_density_and_grad(x)
    step = 1.0 / max(1.0, np.linalg.norm(g))
    for _ in range(max_iter):
        gg = g @ g
        if np.sqrt(gg) < tol:
            break
        a = step
        slack = 1e-12 * (1.0 + abs(f))
        while True:
            xn = x + a * g
            fn, gn = target.log_density_and_grad(xn)
            if np.isfinite(fn) and fn >= f + 1e-4 * a * gg - slack:
                break
            a *= 0.5
            if a < 1e-30:
                raise LaplaceError(f"line search failed at x={x}, |grad|={np.sqrt(gg):.3g}")
        s, yv = xn - x, gn - g
        curv = -(s @ yv)
        step = (s @ s) / curv if curv > 0 else 2.0 * a
        x, f, g = xn, fn, gn
    else:
        raise LaplaceError(f"no convergence in {max_iter} iterations (|grad|={np.linalg.norm(g):.3g})")

    H = fd_hessian(target, x)
    try:
        chol = np.linalg.cholesky(-H)
    except np.linalg.LinAlgError:
        raise LaplaceError("negative Hessian at the mode is not positive definite") from None
    cov = cho_solve((chol, True), np.eye(x.size))
    return x, 0.5 * (cov + cov.T)


def fd_hessian(target: TargetModel, x) -> np.ndarray:
    """Symmetrized central-difference Hessian of ``log f`` from its gradient."""
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.empty((d, d))
    for j in range(d):
        h = 1e-5 * (1.0 + abs(x[j]))
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (target.grad_log_density(x + e) - target.grad_log_density(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


@dataclass
class DefensiveISResult:
    mean: np.ndarray
    variance: np.ndarray
    ess: float
    log_evidence: float
    n_samples: int
    low_ess: bool
    mean_se: np.ndarray = None
    variance_se: np.ndarray = None


def defensive_is_ground_truth(target: TargetModel, laplace, n_samples: int,
                              rng: np.random.Generator, mix_weight: float = 0.5,
                              scale_inflation: float = 1.5,
                              ess_floor: float = 0.0) -> DefensiveISResult:
    """Importance sampling from ``a N(m, C) + (1-a) N(m, k^2 C)``.

    Returns self-normalized moments, ``ESS = 1/sum(w_hat^2)``, the log
    evidence and a flag raised when the ESS falls below ``ess_floor``.
    """
    if not 0.0 < mix_weight <= 1.0:
        raise ContractError("mix_weight must lie in (0, 1]")
    mode, cov = laplace
    mode = np.asarray(mode, dtype=float)
    d = mode.size
    L = np.linalg.cholesky(cov)
    Lw = scale_inflation * L
    first = rng.random(n_samples) < mix_weight
    z = rng.standard_normal((n_samples, d))
    X = mode + np.where(first[:, None], z @ L.T, z @ Lw.T)
    lq1 = _gaussian_logpdf_rows(X, mode, L)
    if mix_weight < 1.0:
        lq2 = _gaussian_logpdf_rows(X, mode, Lw)
        lq = np.logaddexp(np.log(mix_weight) + lq1, np.log1p(-mix_weight) + lq2)
    else:
        lq = lq1
    with np.errstate(all="ignore"):
        lf = np.concatenate([target.log_density_and_grad_batch(X[i:i + 4096])[0]
                             for i in range(0, n_samples, 4096)])
    lf[np.isnan(lf)] = -np.inf
    lw = lf - lq
    top = lw.max()
    w = np.exp(lw - top)
    wn = w / w.sum()
    mean = wn @ X
    dev = X - mean
    var = wn @ (dev * dev)
    ess = 1.0 / np.sum(wn * wn)
    log_z = float(top + np.log(w.sum()) - np.log(n_samples))
    # delta-method standard errors of the self-normalized mean and variance
    se = np.sqrt(np.sum((wn[:, None] * dev) ** 2, axis=0))
    var_se = np.sqrt(np.sum((wn[:, None] * (dev * dev - var)) ** 2, axis=0))
    low = ess < ess_floor
    if low:
        log.warning("defensive IS effective sample size %.1f below floor %.1f", ess, ess_floor)
    return DefensiveISResult(mean, var, float(ess), log_z, n_samples, bool(low), se, var_se)
