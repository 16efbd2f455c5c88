"""Gradient importance sampling with adaptive Gaussian proposals.

Sequential Monte Carlo for a static target: each iteration moves a
population with Langevin-drifted Gaussian proposals whose covariance is
adapted to the samples collected so far, weighs the proposals by
importance weights, and resamples.  The package also provides MCMC
baselines, benchmark targets, diagnostics and an experiment harness.
"""

__version__ = "0.1.0"

from .adapt import AdaptState, new_adapt_state, observe, update_covariance
from .baselines import run_chain, run_chains
from .core import ContractError, DegeneratePopulationError, TargetModel, counted_eval, \
    counted_eval_batch, derive_run_stream
from .diagnostics import GroundTruth, ess_is, ess_mc, ess_mc_min, max_se
from .proposal import DriftConfig
from .sampler import BridgeSpec, GrisConfig, evidence, gris_run, initial_population, \
    rho_schedule, tempered_gris_run
