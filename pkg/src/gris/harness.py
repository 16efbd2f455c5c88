"""Experiment harness: configured replicate runs, persistence and reports.

A configuration has three tables::

    [target]     name = "banana", plus constructor parameters
    [algorithm]  name = "gris" | "gris_tempered" | "am" | "malta" | "tmala" | "hmc",
                 plus sampler parameters
    [run]        eval_budget, n_runs, base_seed, checkpoint_stride, output_dir, jobs

Every run starts at the ground-truth mean ``H``; GRIS draws its ``p`` seed
particles from ``N(H, C0)``.  Run ``r`` uses the stream keyed by
``(base_seed, r)``, so results do not depend on how runs are spread over
worker processes.
"""

from __future__ import annotations

import copy
import csv
import datetime
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import __version__
from .baselines import AmConfig, HmcConfig, MaltaConfig, TmalaConfig, run_chains
from .core import RNG_ALGORITHM, ContractError, derive_run_stream
from .diagnostics import GroundTruth, RunSummary, aggregate, box_stats, summary_from_chain, \
    summary_from_gris
from .proposal import DriftConfig
from .sampler import BridgeSpec, GrisConfig, gris_run, initial_population, rho_schedule, \
    tempered_gris_run
from .targets import BananaSpec, GaussianGridSpec, TMixtureSpec, banana, defensive_is_ground_truth, \
    gaussian, gaussian_grid, laplace_approx, load_german_credit, logreg_posterior, t_mixture

log = logging.getLogger(__name__)

ALGORITHMS = ("gris", "gris_tempered", "am", "malta", "tmala", "hmc")
TARGETS = ("gaussian", "gaussian_grid", "banana", "t_mixture", "logreg")

DEFAULT_CONFIG = {
    "target": {"name": "banana", "b": 0.03, "s": 100.0},
    "algorithm": {
        "name": "gris",
        "population": 10,
        "delta": 0.5,
        "decay_exponent": 1.5,
        "cap_factor": 10.0,
        "eps": 1e-6,
        "adapt_interval": 1,
        "resample": "multinomial",
        "estimator": "samples",
    },
    "run": {
        "eval_budget": 3000,
        "n_runs": 20,
        "base_seed": 0,
        "checkpoint_stride": 100,
        "output_dir": "results",
        "jobs": 1,
    },
}

# parameters each algorithm understands, with defaults (None = module default)
ALGORITHM_PARAMS = {
    "gris": {"population": 10, "delta": 0.5, "decay_exponent": 1.5, "cap_factor": 10.0,
             "t0": None, "C0": None, "s_d": None, "eps": 1e-6, "adapt_interval": 1,
             "resample": "multinomial", "estimator": "samples"},
    "am": {"t0": 100, "C0": None, "s_d": None, "eps": 1e-6, "adapt_interval": 1},
    "malta": {"delta": 0.5, "C": None, "cap_factor": 10.0},
    "tmala": {"delta": 1.0, "C0": None, "s_d": None, "A1": 1e4, "cap_factor": 10.0,
              "refresh_interval": 1},
    "hmc": {"step_size": 0.1, "n_leapfrog": 10, "mass": None},
}
ALGORITHM_PARAMS["gris_tempered"] = dict(
    ALGORITHM_PARAMS["gris"], bridge="geometric", T=20, schedule="linear", schedule_power=2.0,
    g0_scale=3.0, estimator="weighted")


class ConfigError(ContractError):
    pass


@dataclass
class RunSettings:
    eval_budget: int = 3000
    n_runs: int = 20
    base_seed: int = 0
    checkpoint_stride: int = 100
    output_dir: str = "results"
    jobs: int = 1


@dataclass
class ExperimentConfig:
    target: dict
    algorithm: dict
    run: RunSettings

    def to_dict(self) -> dict:
        return {"target": copy.deepcopy(self.target), "algorithm": copy.deepcopy(self.algorithm),
                "run": asdict(self.run)}


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping (as read from TOML) and fill defaults."""
    unknown = set(data) - {"target", "algorithm", "run"}
    if unknown:
        raise ConfigError(f"unknown config tables: {sorted(unknown)}")
    target = dict(data.get("target", DEFAULT_CONFIG["target"]))
    if target.get("name") not in TARGETS:
        raise ConfigError(f"target.name must be one of {TARGETS}, got {target.get('name')!r}")
    algo = dict(data.get("algorithm", {"name": "gris"}))
    name = algo.get("name")
    if name not in ALGORITHMS:
        raise ConfigError(f"algorithm.name must be one of {ALGORITHMS}, got {name!r}")
    allowed = ALGORITHM_PARAMS[name]
    extra = set(algo) - set(allowed) - {"name"}
    if extra:
        raise ConfigError(f"unknown parameters for {name}: {sorted(extra)}")
    for k, v in allowed.items():
        algo.setdefault(k, v)
    algo = {k: v for k, v in algo.items() if v is not None}
    run_tbl = dict(data.get("run", {}))
    try:
        run = RunSettings(**run_tbl)
    except TypeError as e:
        raise ConfigError(f"bad [run] table: {e}") from None
    if "GRIS_SEED" in os.environ:
        run.base_seed = int(os.environ["GRIS_SEED"])
    if run.n_runs < 1:
        raise ConfigError("run.n_runs must be >= 1")
    if run.checkpoint_stride < 1:
        raise ConfigError("run.checkpoint_stride must be >= 1")
    if name.startswith("gris") and run.eval_budget < 2 * algo["population"]:
        raise ConfigError(f"eval_budget {run.eval_budget} must be at least twice the population "
                          f"{algo['population']}")
    if run.eval_budget < 2:
        raise ConfigError("eval_budget must be >= 2")
    return ExperimentConfig(target, algo, run)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    return parse_config(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


# ---------------------------------------------------------------------------
# targets and ground truth


def build_target(tcfg: dict):
    name = tcfg["name"]
    params = {k: v for k, v in tcfg.items() if k not in ("name", "ground_truth", "data_path")}
    try:
        if name == "gaussian":
            return gaussian(params.get("mean", [0.0, 0.0]), params.get("cov", [[1.0, 0.0], [0.0, 4.0]]),
                            log_scale=params.get("log_scale", 0.0))
        if name == "gaussian_grid":
            return gaussian_grid(GaussianGridSpec(**params))
        if name == "banana":
            return banana(BananaSpec(**params))
        if name == "t_mixture":
            return t_mixture(TMixtureSpec(**params))
        if name == "logreg":
            return logreg_posterior(load_german_credit(tcfg.get("data_path"), **params))
    except TypeError as e:
        raise ConfigError(f"bad parameters for target {name}: {e}") from None
    raise ConfigError(f"unknown target {name!r}")


def ground_truth_from_json(path) -> GroundTruth:
    with open(path) as fh:
        d = json.load(fh)
    return GroundTruth(mean=d["mean"], variance=d["variance"], source=d["source"],
                       log_evidence=d.get("log_evidence"),
                       info={k: v for k, v in d.items()
                             if k not in ("mean", "variance", "source", "log_evidence")})


def compute_ground_truth(tcfg: dict, n_samples: int = 100_000, seed: int = 0,
                         ess_floor: float = 0.0) -> GroundTruth:
    """Analytic moments, or defensive IS around a Laplace fit for ``logreg``."""
    target = build_target(tcfg)
    if tcfg["name"] != "logreg":
        return GroundTruth.from_target_info(target.info)
    lap = laplace_approx(target, np.zeros(target.dim))
    res = defensive_is_ground_truth(target, lap, n_samples, derive_run_stream(seed, 0),
                                    ess_floor=ess_floor)
    return GroundTruth(mean=res.mean, variance=res.variance, source="defensive_is",
                       log_evidence=res.log_evidence,
                       info={"ess": res.ess, "n_samples": res.n_samples, "seed": seed,
                             "low_ess": res.low_ess})


def ground_truth_for(tcfg: dict) -> GroundTruth:
    if "ground_truth" in tcfg:
        return ground_truth_from_json(tcfg["ground_truth"])
    if tcfg["name"] == "logreg":
        log.info("no ground_truth file for logreg; running defensive IS")
    return compute_ground_truth(tcfg)


def ground_truth_to_json(truth: GroundTruth) -> dict:
    d = {"source": truth.source, "mean": truth.mean.tolist(), "variance": truth.variance.tolist(),
         "log_evidence": truth.log_evidence}
    d.update(truth.info)
    return d


# ---------------------------------------------------------------------------
# running


def _matrix(value, d, default=None):
    if value is None:
        return default
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(d)
    if a.ndim == 1:
        return np.diag(a)
    return a


def _gris_config(a: dict, d: int, budget: int, stride: int) -> GrisConfig:
    drift = DriftConfig(delta=a["delta"], decay_exponent=a["decay_exponent"],
                        cap_factor=a.get("cap_factor"))
    return GrisConfig(population=a["population"], eval_budget=budget, drift=drift,
                      t0=a.get("t0"), C0=_matrix(a.get("C0"), d), s_d=a.get("s_d"),
                      eps=a["eps"], adapt_interval=a["adapt_interval"],
                      resample_scheme=a["resample"], checkpoint_stride=stride)


def chain_config(name: str, a: dict, d: int):
    if name == "am":
        return AmConfig(t0=a["t0"], C0=_matrix(a.get("C0"), d), s_d=a.get("s_d"), eps=a["eps"],
                        adapt_interval=a["adapt_interval"])
    if name == "malta":
        return MaltaConfig(delta=a["delta"], C=_matrix(a.get("C"), d), cap_factor=a.get("cap_factor"))
    if name == "tmala":
        return TmalaConfig(delta=a["delta"], C0=_matrix(a.get("C0"), d), s_d=a.get("s_d"),
                           A1=a["A1"], cap_factor=a.get("cap_factor"),
                           refresh_interval=a["refresh_interval"])
    if name == "hmc":
        mass = a.get("mass")
        return HmcConfig(step_size=a["step_size"], n_leapfrog=a["n_leapfrog"],
                         mass=None if mass is None else np.broadcast_to(
                             np.asarray(mass, dtype=float), (d,)).copy())
    raise ConfigError(f"{name} is not a chain algorithm")


def _gris_one(cfg: ExperimentConfig, target, truth: GroundTruth, r: int) -> RunSummary:
    a = cfg.algorithm
    d = target.dim
    rng = derive_run_stream(cfg.run.base_seed, r)
    gcfg = _gris_config(a, d, cfg.run.eval_budget, cfg.run.checkpoint_stride)
    C0 = gcfg.C0 if gcfg.C0 is not None else 0.01 * np.eye(d) / d
    init = initial_population(truth.mean, C0, gcfg.population, rng)
    t = target.clone()
    if a["name"] == "gris":
        trace = gris_run(t, gcfg, init, rng)
    else:
        if a["schedule"] == "linear":
            sched = rho_schedule(a["T"], "linear")
        else:
            sched = rho_schedule(a["T"], "power", a["schedule_power"])
        g0 = gaussian(truth.mean, a["g0_scale"] ** 2 * np.diag(truth.variance), name="g0")
        trace = tempered_gris_run(t, BridgeSpec(a["bridge"], g0, sched), gcfg, init, rng)
    if t.counter.count > cfg.run.eval_budget:
        raise RuntimeError(f"run {r} overspent its budget ({t.counter.count})")
    return summary_from_gris(trace, r, a["estimator"])


def _run_block(cfg: ExperimentConfig, truth: GroundTruth, run_ids: list) -> list:
    """Summaries for ``run_ids``; chain algorithms advance them in lockstep."""
    target = build_target(cfg.target)
    name = cfg.algorithm["name"]
    if name.startswith("gris"):
        return [_gris_one(cfg, target, truth, r) for r in run_ids]
    rngs = [derive_run_stream(cfg.run.base_seed, r) for r in run_ids]
    ccfg = chain_config(name, cfg.algorithm, target.dim)
    traces = run_chains(name, target.clone(), truth.mean, rngs, cfg.run.eval_budget, ccfg,
                        cfg.run.checkpoint_stride)
    return [summary_from_chain(tr, r, truth) for tr, r in zip(traces, run_ids)]


def run_summaries(cfg: ExperimentConfig, truth: Optional[GroundTruth] = None,
                  jobs: Optional[int] = None) -> list:
    """Run every replicate and return their summaries ordered by run id."""
    truth = truth if truth is not None else ground_truth_for(cfg.target)
    jobs = max(1, jobs or cfg.run.jobs)
    ids = list(range(cfg.run.n_runs))
    if jobs == 1:
        return _run_block(cfg, truth, ids)
    blocks = [ids[k::jobs] for k in range(jobs) if ids[k::jobs]]
    with ProcessPoolExecutor(max_workers=len(blocks)) as pool:
        parts = list(pool.map(_run_block, [cfg] * len(blocks), [truth] * len(blocks), blocks))
    return sorted((s for part in parts for s in part), key=lambda s: s.run_id)


def _fmt(x) -> str:
    x = float(x)
    return "" if np.isnan(x) else format(x, ".17g")


def write_run_csv(path, summary: RunSummary) -> None:
    d = summary.dim
    header = (["run_id", "eval_count"] + [f"mean_{k + 1}" for k in range(d)]
              + [f"var_{k + 1}" for k in range(d)] + ["log_evidence"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, n in enumerate(summary.eval_counts):
            w.writerow([summary.run_id, int(n)] + [_fmt(v) for v in summary.means[i]]
                       + [_fmt(v) for v in summary.variances[i]] + [_fmt(summary.log_evidence[i])])


def read_run_csv(path) -> RunSummary:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ContractError(f"{path}: no checkpoint rows")
    header, body = rows[0], rows[1:]
    d = sum(h.startswith("mean_") for h in header)
    arr = lambda j: np.array([float(r[j]) if r[j] != "" else np.nan for r in body])
    means = np.column_stack([arr(2 + k) for k in range(d)])
    variances = np.column_stack([arr(2 + d + k) for k in range(d)])
    return RunSummary(int(body[0][0]), arr(1).astype(np.int64), means, variances, arr(2 + 2 * d))


def run_experiment(cfg: ExperimentConfig, jobs: Optional[int] = None,
                   output_dir=None) -> Path:
    """Run, then write ``run_XXX.csv`` per run, ``config.toml`` and ``summary.json``."""
    out = Path(output_dir or cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = ground_truth_for(cfg.target)
    summaries = run_summaries(cfg, truth, jobs)
    for s in summaries:
        write_run_csv(out / f"run_{s.run_id:03d}.csv", s)
    (out / "config.toml").write_text(dump_config(cfg))
    runs = []
    for s in summaries:
        runs.append({
            "run_id": s.run_id,
            "complete": bool(s.eval_counts[-1] >= cfg.run.eval_budget
                             - _iteration_cost(cfg) + 1),
            "final_eval_count": int(s.eval_counts[-1]),
            "final_se": s.final_se(truth).tolist(),
            "final_max_se": s.final_max_se(truth),
            "final_log_evidence": None if np.isnan(s.log_evidence[-1]) else float(s.log_evidence[-1]),
            "ess": s.ess,
        })
    doc = {
        "config": cfg.to_dict(),
        "ground_truth": ground_truth_to_json(truth),
        "runs": runs,
        "aggregate_final": _final_aggregate(summaries, truth),
        "environment": {
            "package_version": __version__,
            "numpy_version": np.__version__,
            "rng": RNG_ALGORITHM,
            "base_seed": cfg.run.base_seed,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    return out


def _iteration_cost(cfg: ExperimentConfig) -> int:
    a = cfg.algorithm
    if a["name"].startswith("gris"):
        return a["population"]
    if a["name"] == "hmc":
        return a["n_leapfrog"]
    return 1


def _final_aggregate(summaries, truth) -> dict:
    try:
        agg = aggregate(summaries, truth)
    except ContractError as e:
        log.warning("runs not aggregated: %s", e)
        return {}
    out = {}
    for key, st in agg.items():
        b, v, m = st.pooled()
        out[key] = {"eval_count": int(st.eval_counts[-1]), "bias2": float(b[-1]),
                    "variance": float(v[-1]), "mse": float(m[-1])}
    return out


# ---------------------------------------------------------------------------
# reports


def load_results(directory):
    directory = Path(directory)
    files = sorted(directory.glob("run_*.csv"))
    if not files:
        raise ContractError(f"{directory}: no run_*.csv files")
    summaries = [read_run_csv(f) for f in files]
    with open(directory / "summary.json") as fh:
        doc = json.load(fh)
    truth = GroundTruth(mean=doc["ground_truth"]["mean"], variance=doc["ground_truth"]["variance"],
                        source=doc["ground_truth"]["source"],
                        log_evidence=doc["ground_truth"].get("log_evidence"))
    return summaries, truth, doc


def report(directory) -> dict:
    """Write ``report_mse.csv``, ``report_final.csv``, ``report_box.csv`` and,
    when evidence estimates exist, ``report_evidence.csv``.  Returns their paths.
    """
    directory = Path(directory)
    summaries, truth, _ = load_results(directory)
    agg = aggregate(summaries, truth)
    d = truth.dim
    paths = {}

    p = directory / "report_mse.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eval_count", "quantity", "dim", "bias2", "variance", "mse"])
        for qty in ("mean", "variance"):
            st = agg[qty]
            pb, pv, pm = st.pooled()
            for i, n in enumerate(st.eval_counts):
                for k in range(d):
                    w.writerow([int(n), qty, k + 1, _fmt(st.bias2[i, k]), _fmt(st.variance[i, k]),
                                _fmt(st.mse[i, k])])
                w.writerow([int(n), qty, "pooled", _fmt(pb[i]), _fmt(pv[i]), _fmt(pm[i])])
    paths["mse"] = p

    p = directory / "report_final.csv"
    se_rows = []
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id"] + [f"se_{k + 1}" for k in range(d)] + ["mean_se", "max_se"])
        for s in summaries:
            se = s.final_se(truth)
            mx = s.final_max_se(truth)
            se_rows.append((se.mean(), mx))
            w.writerow([s.run_id] + [_fmt(v) for v in se] + [_fmt(se.mean()), _fmt(mx)])
    paths["final"] = p

    p = directory / "report_box.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "q1", "median", "q3", "whisker_lo", "whisker_hi", "n_outliers"])
        for j, metric in enumerate(("mean_se", "max_se")):
            b = box_stats([row[j] for row in se_rows])
            w.writerow([metric, _fmt(b.q1), _fmt(b.median), _fmt(b.q3), _fmt(b.whisker_lo),
                        _fmt(b.whisker_hi), b.n_outliers])
    paths["box"] = p

    if "log_evidence" in agg:
        st = agg["log_evidence"]
        p = directory / "report_evidence.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eval_count", "bias2", "variance", "mse"])
            for i, n in enumerate(st.eval_counts):
                w.writerow([int(n), _fmt(st.bias2[i, 0]), _fmt(st.variance[i, 0]),
                            _fmt(st.mse[i, 0])])
        paths["evidence"] = p
    return paths


# ---------------------------------------------------------------------------
# contour grids and tuning


def contour_grid(target, x_range, y_range, nx: int, ny: int, dims=None):
    """``log f`` on an ``nx`` by ``ny`` grid over two coordinates.

    For targets with more than two dimensions the remaining coordinates are
    held at the average of the component means (or the mean), i.e. the grid
    is a conditional slice, not a marginal.

    Returns
    -------
    rows : ndarray, shape (nx * ny, 3)
        ``(x, y, log f)``, x varying slowest.
    meta : dict
    """
    if nx < 2 or ny < 2:
        raise ContractError("nx and ny must be >= 2")
    d = target.dim
    dims = tuple(dims) if dims is not None else (d - 2, d - 1)
    if len(dims) != 2 or dims[0] == dims[1] or not all(0 <= k < d for k in dims):
        raise ContractError(f"dims must be two distinct coordinates of a {d}-D target")
    if "component_means" in target.info:
        base = np.mean(target.info["component_means"], axis=0)
    else:
        base = np.asarray(target.info.get("mean", np.zeros(d)), dtype=float)
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    P = np.tile(base, (nx * ny, 1))
    P[:, dims[0]] = gx.ravel()
    P[:, dims[1]] = gy.ravel()
    logf, _ = target.log_density_and_grad_batch(P)
    meta = {"target": target.name, "dims": [int(k) for k in dims], "nx": nx, "ny": ny,
            "kind": "density" if d == 2 else "conditional_slice",
            "fixed_point": base.tolist() if d > 2 else None}
    return np.column_stack([gx.ravel(), gy.ravel(), logf]), meta


def write_contour(path, rows, meta) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "log_f"])
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def tune_delta(cfg: ExperimentConfig, grid, jobs: Optional[int] = None):
    """Across-run variance of the final mean estimates for each ``delta``.

    Returns ``(best_delta, [(delta, pooled_variance), ...])``.
    """
    if not cfg.algorithm["name"] in ("gris", "gris_tempered", "malta", "tmala"):
        raise ConfigError(f"{cfg.algorithm['name']} has no delta to tune")
    if cfg.run.n_runs < 2:
        raise ConfigError("tuning needs at least two runs")
    truth = ground_truth_for(cfg.target)
    table = []
    for delta in grid:
        c = copy.deepcopy(cfg)
        c.algorithm["delta"] = float(delta)
        finals = np.array([s.means[-1] for s in run_summaries(c, truth, jobs)])
        table.append((float(delta), float(finals.var(axis=0, ddof=1).mean())))
    best = min(table, key=lambda row: row[1])[0]
    return best, table
