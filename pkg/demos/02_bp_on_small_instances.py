"""BP marginals against brute-force enumeration.

On a tree BP is exact, including its Bethe free energy.  On a small loopy
design it is only an approximation, and Glauber dynamics gives a second
independent estimate.
"""

import numpy as np

from gtbp.bp import bethe_free_energy, run_bp
from gtbp.model import Scenario, derive_rng, run_tests, sample_ground_truth
from gtbp.oracles import (GlauberConfig, exhaustive_posterior, glauber_marginals,
                          random_loopy_design, random_tree_design)

scen = Scenario(0.2, 0.95, 0.95)
rng = derive_rng(7, "demo")

for kind, make in (("tree", random_tree_design), ("loopy", random_loopy_design)):
    n = 10
    d = make(n, rng)
    truth = sample_ground_truth(n, scen.lam, rng)
    res = run_tests(d, truth, scen, rng)
    exact = exhaustive_posterior(d, res, scen.lam, scen)
    state, marg, _ = run_bp(d, res, scen.lam, scen, rng=rng)
    gl = glauber_marginals(d, res, scen.lam, scen, GlauberConfig(sweeps=50_000), rng)
    print(f"{kind}: {d.m} tests, acyclic={d.is_acyclic()}")
    print("  truth   ", truth.status.tolist())
    print("  exact   ", np.round(exact.marginals, 3).tolist())
    print("  bp      ", np.round(marg, 3).tolist())
    print("  glauber ", np.round(gl, 3).tolist())
    print(f"  log Z = {exact.log_z:.6f}   Bethe = {bethe_free_energy(state, d, res, scen):.6f}")
