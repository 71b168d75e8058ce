"""Large-n picture of the first stage from population dynamics.

Compares the polarised fractions predicted by the population heuristic
with a direct BP run on a large biregular design.
"""

import numpy as np

from gtbp.bp import run_bp
from gtbp.designs import biregular_for
from gtbp.model import Scenario, derive_rng, run_tests, sample_ground_truth
from gtbp.popdyn import PopDynConfig, popdyn_run

lam, n = 0.05, 10_000
scen = Scenario(lam)
for ratio in (0.1, 0.15, 0.2, 0.25, 0.3):
    pd = popdyn_run(PopDynConfig.for_ratio(lam, scen, ratio), derive_rng(0, "popdyn"))
    rng = derive_rng(0, ratio)
    d = biregular_for(n, round(ratio * n), lam, rng)
    res = run_tests(d, sample_ground_truth(n, lam, rng), scen, rng)
    _, marg, _ = run_bp(d, res, lam, scen, rng=rng)
    print(f"m/n={ratio:.2f}  healthy popdyn {pd.polarised_healthy:.3f} sim {np.mean(marg < 1e-6):.3f}"
          f"   infected popdyn {pd.polarised_infected:.3f} sim {np.mean(marg > 1 - 1e-6):.3f}")
