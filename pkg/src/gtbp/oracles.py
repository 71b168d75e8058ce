"""Reference posteriors: exhaustive enumeration and Glauber dynamics."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .bp import as_priors, run_bp
from .model import PoolDesign, derive_rng, run_tests, sample_ground_truth

EXHAUSTIVE_MAX_N = 22
_CHUNK = 1 << 16


@dataclass(frozen=True)
class ExactPosterior:
    marginals: np.ndarray
    log_z: float       # log of the normalising sum of posterior weights
    entropy: float     # nats
    probs: np.ndarray  # full distribution, index = binary code of the assignment


def _log_factors(scen):
    """Table ``[outcome, dirty]`` of log test factors."""
    with np.errstate(divide="ignore"):
        return np.log(np.array([[scen.p, 1.0 - scen.q],
                                [1.0 - scen.p, scen.q]]))


def exhaustive_posterior(design, results, priors, scen):
    """Enumerate all 2^n assignments (bit x of the code is sample x)."""
    n = design.n
    if n > EXHAUSTIVE_MAX_N:
        raise ValueError(f"exhaustive enumeration limited to n <= {EXHAUSTIVE_MAX_N}")
    pri = as_priors(priors, n)
    with np.errstate(divide="ignore"):
        l1, l0 = np.log(pri), np.log1p(-pri)
    logf = _log_factors(scen)
    masks = np.zeros(design.m, dtype=np.int64)
    np.bitwise_or.at(masks, design.edge_test, np.left_shift(1, design.members))
    outcomes = results.outcomes.astype(np.int64)
    total = 1 << n
    logw = np.empty(total)
    for lo in range(0, total, _CHUNK):
        codes = np.arange(lo, min(lo + _CHUNK, total), dtype=np.int64)
        bits = (codes[:, None] >> np.arange(n)) & 1
        lw = np.where(bits == 1, l1, l0).sum(axis=1)
        if design.m:
            dirty = (codes[:, None] & masks) != 0
            lw += logf[outcomes, dirty.astype(np.int64)].sum(axis=1)
        logw[lo:lo + codes.size] = lw
    top = logw.max()
    if top == -np.inf:
        raise ValueError("no assignment has positive posterior weight")
    w = np.exp(logw - top)
    z = w.sum()
    probs = w / z
    codes = np.arange(total, dtype=np.int64)
    marg = np.array([probs[(codes >> x) & 1 == 1].sum() for x in range(n)])
    nz = probs > 0
    entropy = float(-(probs[nz] * np.log(probs[nz])).sum())
    return ExactPosterior(marg, float(top + np.log(z)), entropy, probs)


def exhaustive_marginals(design, results, priors, scen):
    return exhaustive_posterior(design, results, priors, scen).marginals


@dataclass
class GlauberConfig:
    """``sweeps`` full passes (n single-site steps each); the first
    ``burn_in`` fraction of steps is discarded."""

    sweeps: int = 10_000
    burn_in: float = 0.2
    factor_floor: float = 1e-12

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be positive")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")


@dataclass
class GlauberResult:
    marginals: np.ndarray
    steps: int
    kept: int
    histogram: np.ndarray = None  # visits per configuration, if requested


def glauber_run(design, results, priors, scen, config, rng, histogram=False):
    """Heat-bath Glauber dynamics on the posterior, started from the prior.

    At every step a uniform sample is redrawn from its exact conditional
    given all other statuses.  Factors are floored at ``factor_floor`` so that
    noiseless instances keep an irreducible chain.
    """
    n = design.n
    pri = np.clip(as_priors(priors, n), config.factor_floor, 1.0 - config.factor_floor)
    lp1, lp0 = np.log(pri), np.log1p(-pri)
    fl = config.factor_floor
    factors = np.array([[scen.p, 1.0 - scen.q], [1.0 - scen.p, scen.q]])
    log_psi = np.log(np.maximum(factors, fl))
    steps = config.sweeps * n
    burn = int(config.burn_in * steps)
    state = (rng.random(n) < pri).astype(np.int64)
    sites = rng.integers(0, n, size=steps)
    uniforms = rng.random(steps)
    counts = np.zeros(n, dtype=np.int64)
    hist = np.zeros(1 << n if histogram else 0, dtype=np.int64)
    d = design
    K.glauber_chain(sites, uniforms, state, burn, d.test_ptr, d.members, d.sample_ptr,
                    d.sample_edges, d.edge_test, results.outcomes.astype(np.int64), lp0, lp1,
                    log_psi, counts, hist)
    kept = steps - burn
    return GlauberResult(counts / kept, steps, kept, hist if histogram else None)


def glauber_marginals(design, results, priors, scen, config, rng):
    return glauber_run(design, results, priors, scen, config, rng).marginals


def glauber_trace(design, results, priors, scen, config, rng, path):
    """Write every status change of a chain as CSV rows ``step,sample,new_value``.

    Uses its own pure-Python loop; meant for small diagnostic runs.
    """
    n = design.n
    pri = np.clip(as_priors(priors, n), config.factor_floor, 1.0 - config.factor_floor)
    factors = np.array([[scen.p, 1.0 - scen.q], [1.0 - scen.p, scen.q]])
    log_psi = np.log(np.maximum(factors, config.factor_floor))
    state = (rng.random(n) < pri).astype(np.int64)
    tests = design.samples
    pools = design.tests
    out = results.outcomes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "sample", "new_value"])
        for t in range(config.sweeps * n):
            x = int(rng.integers(n))
            w1, w0 = np.log(pri[x]), np.log1p(-pri[x])
            for a in tests[x]:
                others = state[pools[a]].sum() - state[x]
                w1 += log_psi[out[a], 1]
                w0 += log_psi[out[a], int(others > 0)]
            new = int(rng.random() < 1.0 / (1.0 + np.exp(w0 - w1)))
            if new != state[x]:
                state[x] = new
                w.writerow([t, x, new])


# --- tiny random instances ------------------------------------------------------------

def random_tree_design(n, rng, max_new=3):
    """Acyclic design: each test joins one covered sample with fresh ones."""
    order = rng.permutation(n)
    pools = []
    covered = 1
    while covered < n:
        k = int(rng.integers(1, max_new + 1))
        fresh = order[covered:covered + k]
        anchor = order[int(rng.integers(0, covered))]
        pools.append(np.concatenate([[anchor], fresh]))
        covered += fresh.size
    return PoolDesign.from_pools(n, pools)


def random_loopy_design(n, rng, m=None, sizes=(2, 4)):
    m = int(rng.integers(n // 2, n + 1)) if m is None else m
    pools = [rng.choice(n, size=min(n, int(rng.integers(sizes[0], sizes[1] + 1))), replace=False)
             for _ in range(m)]
    return PoolDesign.from_pools(n, pools)


def oracle_check(n, scen, instances, sweeps, seed):
    """Max marginal error of BP (acyclic instances only) and Glauber against
    exhaustive enumeration; alternates tree and loopy designs.

    Returns rows ``(index, acyclic, bp_err, glauber_err)``; ``bp_err`` is NaN
    for loopy designs.
    """
    if not 2 <= n <= EXHAUSTIVE_MAX_N:
        raise ValueError(f"n must lie in [2, {EXHAUSTIVE_MAX_N}]")
    rows = []
    for i in range(instances):
        rng = derive_rng(seed, i, "oracle")
        design = random_tree_design(n, rng) if i % 2 == 0 else random_loopy_design(n, rng)
        truth = sample_ground_truth(n, scen.lam, rng)
        results = run_tests(design, truth, scen, rng)
        exact = exhaustive_marginals(design, results, scen.lam, scen)
        acyclic = design.is_acyclic()
        bp_err = math.nan
        if acyclic:
            _, marg, _ = run_bp(design, results, scen.lam, scen, rng=rng)
            bp_err = float(np.abs(marg - exact).max())
        gl = glauber_marginals(design, results, scen.lam, scen, GlauberConfig(sweeps=sweeps), rng)
        rows.append((i, acyclic, bp_err, float(np.abs(gl - exact).max())))
    return rows
