"""Classic pooling schemes at a 5% prior.

Prints closed-form expectations next to a short Monte Carlo run for
two-stage Dorfman, then compares tests per sample for the simple designs.
"""

from gtbp import experiments as X
from gtbp.model import Scenario

n, lam = 10_000, 0.05
scen = Scenario(lam, 0.99, 0.99)

for stages in (2, 3):
    ex = X.dorfman_expectations(n, lam, scen, stages)
    print(f"{stages}-stage Dorfman, p=q=0.99: E[tests]/n={ex.tests / n:.4f} "
          f"E[FP]={ex.fp:.2f} E[FN]={ex.fn:.2f}")

res = X.run_experiment(X.ExperimentConfig(n, scen, "dorfman2", reps=20, seed=1))
print("simulated 2-stage over 20 reps: tests/n=%.4f FP=%.2f FN=%.2f" % (
    res.column("tests_per_n").mean(), res.column("fp").mean(), res.column("fn").mean()))

print()
print("noiseless tests per sample at n=1000:")
for design in ("individual", "dorfman2", "dorfman3", "grid"):
    r = X.run_experiment(X.ExperimentConfig(1000, Scenario(lam), design, reps=10, seed=2))
    print(f"  {design:<10} {r.column('tests_per_n').mean():.3f}")
