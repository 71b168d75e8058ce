"""How much does each pooled test teach us?

The Bethe entropy of the first-stage posterior is traced as tests are
added to a biregular design.  Early on every test removes close to ln 2
nats; the curve then flattens, which is where the first stage should stop.
"""

import math

from gtbp import experiments as X
from gtbp.model import Scenario

n, lam = 1000, 0.05
grid = list(range(0, 401, 50))
rows = X.entropy_curve(n, lam, Scenario(lam), grid, reps=5, seed=3)
prev = None
for m, mean, std, _ in rows:
    drop = "" if prev is None else f"  per test {(prev - mean) / 50:.3f}"
    print(f"m={m:4d}  H={mean:8.2f} ± {std:5.2f}{drop}")
    prev = mean
print(f"ln 2 = {math.log(2):.3f}")
print(f"fitted slope for m/n <= 0.15: {X.entropy_slope(rows, max_m=150):.3f}")
