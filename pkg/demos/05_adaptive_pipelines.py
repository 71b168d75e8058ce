"""Adaptive BP against the baselines under high noise.

Runs a handful of replicates of each pipeline at p=q=0.95 and prints the
mean tests, error rates and where the decisions were made.
"""

import numpy as np

from gtbp import experiments as X
from gtbp import pipeline as PL
from gtbp.model import scenario

n, reps = 1000, 10
scen = scenario(0.01, "high")

print(f"{'design':<16}{'tests':>8}{'fpr':>9}{'fnr':>9}")
for design in ("individual", "individual2", "dorfman2", "bp_individual", "abp1", "abp2", "abp3"):
    res = X.run_experiment(X.ExperimentConfig(n, scen, design, reps=reps, seed=5))
    print(f"{design:<16}{res.column('tests_total').mean():8.1f}"
          f"{res.column('fpr').mean():9.4f}{res.column('fnr').mean():9.4f}")

trace = PL.run_adaptive_bp(n, scen, 1, rng=5)
print()
print("aBP-1, one run: tests by stage", trace.tests_by_stage(3),
      "decided by stage", np.round(trace.stage_fractions(3), 3).tolist())
