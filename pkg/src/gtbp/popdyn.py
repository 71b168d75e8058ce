"""Simplified population dynamics for the large-n distribution of BP marginals.

Each sample's local neighbourhood is modelled as Δ tests whose Γ-1 other
members are independent Be(λ) draws.  Two populations of sample-to-test
messages are kept, one for truly healthy and one for truly infected
samples, and refreshed by one-step BP updates on freshly drawn
neighbourhoods.  This is a heuristic stand-in for full density evolution.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

POLARISED = 1e-6
MIN_POPULATION = 10_000


@dataclass(frozen=True)
class PopDynConfig:
    lam: float
    scen: object
    delta: float        # mean tests per sample; fractional values mix floor and ceil
    gamma: int          # pool size
    population: int = MIN_POPULATION
    iterations: int = 30
    bins: int = 50

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.population < MIN_POPULATION:
            raise ValueError(f"population must be at least {MIN_POPULATION}")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.delta < 0 or self.gamma < 1:
            raise ValueError("degrees must be non-negative")

    @classmethod
    def for_ratio(cls, lam, scen, m_over_n, **kw):
        """Half-positive pool size for ``lam`` and Δ = (m/n)·Γ."""
        gamma = max(1, round(math.log(2) / lam))
        return cls(lam, scen, m_over_n * gamma, gamma, **kw)


@dataclass
class PopDynResult:
    bin_edges: np.ndarray
    mass: np.ndarray          # histogram of non-polarised marginals, sums to 1 when any exist
    polarised_healthy: float  # fraction of all samples with marginal < POLARISED
    polarised_infected: float
    marginals: np.ndarray
    status: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "mass"])
            for lo, hi, m in zip(self.bin_edges[:-1], self.bin_edges[1:], self.mass):
                w.writerow([f"{lo:.6g}", f"{hi:.6g}", f"{m:.12g}"])


def _degrees(delta, size, rng, edge=False):
    """Floor/ceil mixture with mean ``delta``; ``edge`` gives the degree seen
    from a uniformly chosen edge (size-biased)."""
    lo = math.floor(delta)
    frac = delta - lo
    if edge and frac > 0:
        frac = frac * (lo + 1) / delta
    return lo + (rng.random(size) < frac).astype(np.int64)


def _neighbourhood_weights(status, n_tests, cfg, pops, rng):
    """Sum over each root's tests of the log test-to-sample message pair.

    ``n_tests[i]`` tests are drawn for root ``i``; returns ``(s0, s1)``.
    """
    P = status.size
    dmax = int(n_tests.max()) if P else 0
    s0 = np.zeros(P)
    s1 = np.zeros(P)
    if dmax == 0:
        return s0, s1
    p, q = cfg.scen.p, cfg.scen.q
    k = cfg.gamma - 1
    active = np.arange(dmax)[None, :] < n_tests[:, None]       # (P, dmax)
    co = rng.random((P, dmax, k)) < cfg.lam                      # co-member statuses
    msgs = np.empty((P, dmax, k))
    for s in (0, 1):
        sel = co == bool(s)
        pool = pops[s]
        msgs[sel] = pool[rng.integers(0, pool.size, size=int(sel.sum()))]
    dirty = co.any(axis=2) | (status[:, None] == 1)
    u = rng.random((P, dmax))
    positive = np.where(dirty, u < q, u >= p)
    with np.errstate(divide="ignore"):
        log_pi = np.log1p(-msgs).sum(axis=2)
        pi = np.exp(log_pi)
        c = p + q - 1.0
        a0 = np.where(positive, q - c * pi, 1.0 - q + c * pi)
        a1 = np.where(positive, q, 1.0 - q)
        la0 = np.where(active, np.log(np.maximum(a0, 0.0)), 0.0)
        la1 = np.where(active, np.log(a1), 0.0)
    return la0.sum(axis=1), la1.sum(axis=1)


def _posterior(s0, s1, lam):
    w0 = math.log1p(-lam) + s0
    w1 = math.log(lam) + s1
    out = np.full(s0.size, lam)
    ok = np.isfinite(w0) | np.isfinite(w1)   # contradictory draws keep the prior
    d = np.clip(w0[ok] - w1[ok], -700.0, 700.0)
    out[ok] = 1.0 / (1.0 + np.exp(d))
    out[ok & (w0 == -np.inf)] = 1.0
    out[ok & (w1 == -np.inf)] = 0.0
    return out


def popdyn_run(cfg, rng):
    """Iterate the message populations, then sample root marginals."""
    P = cfg.population
    pops = [np.full(P, cfg.lam), np.full(P, cfg.lam)]
    for _ in range(cfg.iterations):
        new = []
        for s in (0, 1):
            status = np.full(P, s, dtype=np.int8)
            # a sample-to-test message sees all tests but the receiving one
            n_tests = np.maximum(_degrees(cfg.delta, P, rng, edge=True) - 1, 0)
            s0, s1 = _neighbourhood_weights(status, n_tests, cfg, pops, rng)
            new.append(_posterior(s0, s1, cfg.lam))
        pops = new
    status = (rng.random(P) < cfg.lam).astype(np.int8)
    s0, s1 = _neighbourhood_weights(status, _degrees(cfg.delta, P, rng), cfg, pops, rng)
    marg = _posterior(s0, s1, cfg.lam)
    healthy = marg < POLARISED
    infected = marg > 1.0 - POLARISED
    free = marg[~healthy & ~infected]
    edges = np.linspace(0.0, 1.0, cfg.bins + 1)
    counts = np.histogram(free, bins=edges)[0].astype(float)
    mass = counts / counts.sum() if free.size else counts
    return PopDynResult(edges, mass, float(healthy.mean()), float(infected.mean()), marg, status)
