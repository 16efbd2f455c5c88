"""
Importance weights, resampling and effective sample size
========================================================

Two effective sample sizes appear in this package.  For weighted samples
``ESS_IS = 1 / sum(w_hat^2)`` counts how many equally weighted draws the
weights are worth.  For a Markov chain ``ESS_MC`` discounts the sample
size by the autocorrelation, measured around the known mean and variance.
"""

import numpy as np

from gris.diagnostics import ess_is, ess_mc
from gris.resample import multinomial_resample, systematic_resample

rng = np.random.default_rng(0)

# %%
# ESS of weights
# --------------
print("equal weights:", ess_is(np.zeros(8)))
print("weights (1, 3):", ess_is(np.log([1.0, 3.0])))
lw = rng.normal(scale=2.0, size=1000)
print("lognormal weights, sigma 2:", round(ess_is(lw), 1), "of 1000")

# %%
# Resampling schemes
# ------------------
#
# Multinomial resampling draws indices independently.  Systematic
# resampling uses one uniform and evenly spaced positions, so each index
# appears within one of its expected count.
w = np.array([0.1, 0.2, 0.3, 0.4])
for name, fn in (("multinomial", multinomial_resample), ("systematic", systematic_resample)):
    counts = np.bincount(fn(np.log(w), 20, rng), minlength=4)
    print(f"{name:12s} counts {counts}   expected {20 * w}")

# %%
# ESS of a correlated chain
# -------------------------
#
# An AR(1) series with coefficient ``phi`` has integrated autocorrelation
# ``(1 + phi) / (1 - phi)``.
phi, n = 0.8, 20_000
x = np.empty(n)
x[0] = rng.standard_normal()
for i in range(1, n):
    x[i] = phi * x[i - 1] + np.sqrt(1 - phi * phi) * rng.standard_normal()
print(f"AR(1): ESS {ess_mc(x, 0.0, 1.0):.0f}, theory {n * (1 - phi) / (1 + phi):.0f}")
