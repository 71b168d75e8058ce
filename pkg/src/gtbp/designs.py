"""Pooling schemes: individual, Dorfman, grid, random biregular and informative Dorfman."""

import math
from dataclasses import dataclass

import numpy as np

from .model import PoolDesign


# --- plain partitions ---------------------------------------------------------

def consecutive_pools(samples, size):
    """Split ``samples`` into consecutive chunks of ``size`` (last may be shorter)."""
    samples = np.asarray(samples, dtype=np.int64)
    return [samples[i:i + size] for i in range(0, samples.size, size)]


def individual_design(samples, n):
    """One single-member test per entry of ``samples``."""
    samples = np.asarray(samples, dtype=np.int64)
    return PoolDesign(n, np.arange(samples.size + 1), samples)


def repeated_individual_design(n, reps):
    return PoolDesign(n, np.arange(n * reps + 1), np.tile(np.arange(n), reps))


# --- Dorfman ------------------------------------------------------------------

def dorfman_cost(s, lam):
    """Expected noiseless tests per sample of two-stage Dorfman with pools of ``s``."""
    if s == 1:
        return 1.0
    return 1.0 / s + 1.0 - (1.0 - lam) ** s


def dorfman_pool_size(lam, s_max=1000):
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda={lam} must lie in (0, 1)")
    costs = [dorfman_cost(s, lam) for s in range(1, s_max + 1)]
    return int(np.argmin(costs)) + 1


@dataclass(frozen=True)
class DorfmanScheme:
    """Two-stage Dorfman: disjoint pools, then individual retests of positive pools.

    A pool of a single sample is already an individual test and is final.
    """

    stage1: PoolDesign
    pool_size: int

    def followup(self, outcomes):
        """Samples to retest individually given the stage-1 outcomes."""
        d = self.stage1
        out = []
        for a in np.flatnonzero(np.asarray(outcomes) == 1):
            lo, hi = d.test_ptr[a], d.test_ptr[a + 1]
            if hi - lo > 1:
                out.append(d.members[lo:hi])
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def build_dorfman2(n, lam, pool_size=None):
    s = dorfman_pool_size(lam) if pool_size is None else int(pool_size)
    s = max(1, min(s, n))
    return DorfmanScheme(PoolDesign.from_pools(n, consecutive_pools(np.arange(n), s)), s)


def dorfman3_cost(s1, s2, lam):
    """Expected noiseless tests per sample of three-stage Dorfman."""
    h = 1.0 - lam
    cost = 1.0 / s1 + (1.0 - h ** s1) / s2
    if s2 > 1:
        cost += 1.0 - h ** s2
    return cost


def dorfman3_sizes(lam, r_range=range(2, 21)):
    """(stage-1 size, sub-pool size): sub-pools take the Dorfman size, the
    stage-1 multiplier minimises expected tests."""
    s2 = dorfman_pool_size(lam)
    r = min(r_range, key=lambda r: dorfman3_cost(s2 * r, s2, lam))
    return s2 * r, s2


@dataclass(frozen=True)
class Dorfman3Scheme:
    stage1: PoolDesign
    pool_size: int
    subpool_size: int

    def subpools(self, outcomes):
        """Stage-2 design splitting every positive multi-sample pool."""
        d = self.stage1
        pools = []
        for a in np.flatnonzero(np.asarray(outcomes) == 1):
            lo, hi = d.test_ptr[a], d.test_ptr[a + 1]
            if hi - lo > 1:
                pools.extend(consecutive_pools(d.members[lo:hi], self.subpool_size))
        return PoolDesign.from_pools(d.n, pools)

    def followup(self, stage2, outcomes):
        """Members of positive multi-sample sub-pools, to be tested individually."""
        return DorfmanScheme(stage2, self.subpool_size).followup(outcomes)


def build_dorfman3(n, lam):
    s1, s2 = dorfman3_sizes(lam)
    s1 = min(s1, n)
    return Dorfman3Scheme(PoolDesign.from_pools(n, consecutive_pools(np.arange(n), s1)), s1, s2)


# --- grid -----------------------------------------------------------------------

def grid_side(lam):
    """Grid side length: one below the Dorfman pool size, within [2, 16]."""
    return int(np.clip(dorfman_pool_size(lam) - 1, 2, 16))


@dataclass(frozen=True)
class GridScheme:
    """Row and column pools over g-by-g blocks of consecutive samples."""

    stage1: PoolDesign
    side: int
    row_test: np.ndarray
    col_test: np.ndarray

    def followup(self, outcomes):
        """Samples whose row pool and column pool are both positive."""
        outcomes = np.asarray(outcomes)
        both = (outcomes[self.row_test] == 1) & (outcomes[self.col_test] == 1)
        return np.flatnonzero(both)


def build_grid(n, lam, side=None):
    g = grid_side(lam) if side is None else int(side)
    pools = []
    row_test = np.empty(n, dtype=np.int64)
    col_test = np.empty(n, dtype=np.int64)
    for start in range(0, n, g * g):
        block = np.arange(start, min(start + g * g, n))
        local = np.arange(block.size)
        rows, cols = local // g, local % g
        for r in np.unique(rows):
            row_test[block[rows == r]] = len(pools)
            pools.append(block[rows == r])
        for c in np.unique(cols):
            col_test[block[cols == c]] = len(pools)
            pools.append(block[cols == c])
    return GridScheme(PoolDesign.from_pools(n, pools), g, row_test, col_test)


# --- random biregular -------------------------------------------------------------

@dataclass(frozen=True)
class DegreePair:
    delta: int
    gamma: int

    def __post_init__(self):
        if self.delta < 1 or self.gamma < 1:
            raise ValueError("degrees must be positive")


def choose_degrees(lam_eff, m, n):
    """Pool size so that about half the tests read positive; sample degree
    follows from edge-count consistency."""
    if not 0.0 < lam_eff < 1.0:
        raise ValueError(f"lambda={lam_eff} must lie in (0, 1)")
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    gamma = int(np.clip(round(math.log(2) / lam_eff), 1, n))
    delta = max(1, round(m * gamma / n))
    return DegreePair(delta, gamma)


def pairing_model(n, m, gamma, rng):
    """Raw configuration-model pairing: an ``(m, gamma)`` array of sample indices.

    Sample degrees are ``E // n`` or ``E // n + 1`` (randomly assigned) so
    that they sum to ``E = m * gamma``.  May contain repeated samples per row.
    """
    total = m * gamma
    deg = np.full(n, total // n, dtype=np.int64)
    deg[rng.choice(n, size=total % n, replace=False)] += 1
    half_edges = np.repeat(np.arange(n, dtype=np.int64), deg)
    rng.shuffle(half_edges)
    return half_edges.reshape(m, gamma)


def build_biregular(n, m, degrees, rng):
    gamma = degrees.gamma
    if gamma > n:
        raise ValueError(f"pool size {gamma} exceeds n={n}")
    if abs(m * gamma - n * degrees.delta) > n:
        raise ValueError("degrees inconsistent with (n, m)")
    raw = pairing_model(n, m, gamma, rng)
    # collapse repeated samples within a pool, keeping first occurrences
    key = (np.arange(m)[:, None] * n + raw).ravel()
    _, first = np.unique(key, return_index=True)
    first.sort()
    members = raw.ravel()[first]
    sizes = np.bincount(first // gamma, minlength=m)
    ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    return PoolDesign(n, ptr, members)


def biregular_for(n, m, lam, rng):
    """Biregular design with half-positive degrees for prior ``lam``."""
    return build_biregular(n, m, choose_degrees(lam, m, n), rng)


# --- informative Dorfman ------------------------------------------------------------

INDIVIDUAL_ABOVE = 0.3
POOL_CAP = 32


@dataclass(frozen=True)
class DorfmanPlan:
    """Pools (in ascending-marginal order) and the samples tested singly.

    Indices refer to positions in the marginal vector the plan was built from.
    """

    pools: tuple
    individual: np.ndarray

    @property
    def n_tests_first(self):
        return len(self.pools) + self.individual.size


def pool_positive_prob(marginals, scen):
    clean = float(np.prod(1.0 - np.asarray(marginals, dtype=float)))
    return scen.q * (1.0 - clean) + (1.0 - scen.p) * clean


def plan_expected_tests(plan, marginals, scen):
    marginals = np.asarray(marginals, dtype=float)
    total = float(plan.individual.size)
    for pool in plan.pools:
        total += 1.0 + pool.size * pool_positive_prob(marginals[pool], scen)
    return total


def _segment_cost(log_clean_prefix, j, i, scen):
    size = i - j
    if size == 1:
        return 1.0
    clean = math.exp(log_clean_prefix[i] - log_clean_prefix[j])
    return 1.0 + size * (scen.q * (1.0 - clean) + (1.0 - scen.p) * clean)


def informative_dorfman_plan(marginals, scen, cap=POOL_CAP, individual_above=INDIVIDUAL_ABOVE):
    """Sort by marginal and cut into contiguous pools minimising expected tests."""
    marginals = np.asarray(marginals, dtype=float)
    individual = np.flatnonzero(marginals > individual_above)
    rest = np.flatnonzero(marginals <= individual_above)
    order = rest[np.argsort(marginals[rest], kind="stable")]
    k = order.size
    with np.errstate(divide="ignore"):
        log_clean = np.concatenate([[0.0], np.cumsum(np.log1p(-marginals[order]))])
    best = np.full(k + 1, np.inf)
    best[0] = 0.0
    cut = np.zeros(k + 1, dtype=np.int64)
    for i in range(1, k + 1):
        for j in range(max(0, i - cap), i):
            c = best[j] + _segment_cost(log_clean, j, i, scen)
            if c < best[i]:
                best[i], cut[i] = c, j
    segments = []
    i = k
    while i > 0:
        segments.append((cut[i], i))
        i = cut[i]
    segments.reverse()
    pools = tuple(order[j:i] for j, i in segments if i - j > 1)
    singles = [order[j] for j, i in segments if i - j == 1]
    individual = np.sort(np.concatenate([individual, np.asarray(singles, dtype=np.int64)]))
    return DorfmanPlan(pools, individual.astype(np.int64))


# --- text format ----------------------------------------------------------------------

def format_design(design):
    lines = [f"{design.n} {design.m}"]
    lines.extend(" ".join(map(str, t.tolist())) for t in design.tests)
    return "\n".join(lines) + "\n"


def parse_design(text):
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty design file")
    n, m = (int(v) for v in lines[0].split())
    pools = [[int(v) for v in line.split()] for line in lines[1:1 + m]]
    if len(pools) != m:
        raise ValueError(f"expected {m} test lines, found {len(pools)}")
    return PoolDesign.from_pools(n, pools)


def write_design(design, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_design(design))


def read_design(path):
    with open(path, encoding="utf-8") as fh:
        return parse_design(fh.read())
