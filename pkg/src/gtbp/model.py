"""Group testing model: ground truth, pool designs and the noisy test channel.

A pool design is a bipartite incidence structure between ``n`` samples and
``m`` tests.  Tests report the OR of their members' statuses through a
binary asymmetric channel with specificity ``p`` (a clean pool reads
negative with probability ``p``) and sensitivity ``q`` (a pool holding an
infected sample reads positive with probability ``q``).
"""

import zlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Scenario:
    """Prior infection probability together with the test noise levels."""

    lam: float
    p: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        for name in ("lam", "p", "q"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    @property
    def noiseless(self):
        return self.p == 1.0 and self.q == 1.0

    def with_lam(self, lam):
        return Scenario(lam, self.p, self.q)


NOISE_PRESETS = {
    "noiseless": (1.0, 1.0),
    "moderate": (0.99, 0.98),
    "high": (0.95, 0.95),
}


def scenario(lam, noise="noiseless"):
    """Build a :class:`Scenario` from a prior and a preset name or a ``(p, q)`` pair."""
    if isinstance(noise, str):
        try:
            p, q = NOISE_PRESETS[noise]
        except KeyError:
            raise ValueError(f"unknown noise preset {noise!r}") from None
    else:
        p, q = noise
    return Scenario(float(lam), float(p), float(q))


def noise_name(scen):
    """Name of the preset matching ``scen``'s (p, q), or ``None``."""
    for name, pq in NOISE_PRESETS.items():
        if pq == (scen.p, scen.q):
            return name
    return None


# --- randomness -------------------------------------------------------------

def _tag(key):
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_rng(seed, *keys):
    """Independent generator for ``(seed, keys...)``.

    Keys may be ints (replicate, stage) or strings (purpose tags). The same
    key tuple always yields the same stream, whatever else was drawn before.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_tag(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


# --- core types -------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    status: np.ndarray

    def __post_init__(self):
        status = np.asarray(self.status, dtype=np.int8).copy()
        if status.ndim != 1 or np.any((status != 0) & (status != 1)):
            raise ValueError("status must be a 1-d binary vector")
        status.setflags(write=False)
        object.__setattr__(self, "status", status)

    @property
    def n(self):
        return self.status.size

    @property
    def k(self):
        return int(self.status.sum())


def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class PoolDesign:
    """Bipartite sample/test incidence structure.

    Stored in compressed form: the members of test ``a`` are
    ``members[test_ptr[a]:test_ptr[a+1]]``.  Every incidence is an *edge*
    indexed in that test-major order; ``sample_edges[sample_ptr[x]:sample_ptr[x+1]]``
    lists the edges at sample ``x``.
    """

    __slots__ = ("n", "m", "test_ptr", "members", "edge_test", "sample_ptr", "sample_edges")

    def __init__(self, n, test_ptr, members):
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        test_ptr = np.asarray(test_ptr, dtype=np.int64)
        members = np.asarray(members, dtype=np.int64)
        if test_ptr.ndim != 1 or test_ptr.size < 1 or test_ptr[0] != 0 or test_ptr[-1] != members.size:
            raise ValueError("malformed test pointer array")
        sizes = np.diff(test_ptr)
        if np.any(sizes <= 0):
            raise ValueError("empty pool in design")
        if members.size and (members.min() < 0 or members.max() >= n):
            raise ValueError("sample index out of range")
        m = sizes.size
        edge_test = np.repeat(np.arange(m, dtype=np.int64), sizes)
        key = edge_test * max(n, 1) + members
        if np.unique(key).size != key.size:
            raise ValueError("duplicate (sample, test) incidence")
        order = np.argsort(members, kind="stable")
        sample_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(members, minlength=n), out=sample_ptr[1:])

        self.n = n
        self.m = m
        self.test_ptr = _readonly(test_ptr, np.int64)
        self.members = _readonly(members, np.int64)
        self.edge_test = _readonly(edge_test, np.int64)
        self.sample_ptr = _readonly(sample_ptr, np.int64)
        self.sample_edges = _readonly(order, np.int64)

    @classmethod
    def from_pools(cls, n, pools):
        """Build from an iterable of member lists; repeated members are collapsed."""
        ptr = [0]
        flat = []
        for pool in pools:
            seen = dict.fromkeys(int(x) for x in pool)
            flat.extend(seen)
            ptr.append(len(flat))
        return cls(n, ptr, flat)

    @classmethod
    def empty(cls, n):
        return cls(n, [0], [])

    # adjacency views
    @property
    def n_edges(self):
        return self.members.size

    @property
    def tests(self):
        return [self.members[self.test_ptr[a]:self.test_ptr[a + 1]] for a in range(self.m)]

    @property
    def samples(self):
        return [np.sort(self.edge_test[self.sample_edges[self.sample_ptr[x]:self.sample_ptr[x + 1]]])
                for x in range(self.n)]

    @property
    def test_sizes(self):
        return np.diff(self.test_ptr)

    @property
    def sample_degrees(self):
        return np.diff(self.sample_ptr)

    @property
    def gamma_max(self):
        return int(self.test_sizes.max()) if self.m else 0

    def embed(self, index_map, n):
        """Relabel local sample ``i`` as ``index_map[i]`` inside a population of ``n``."""
        index_map = np.asarray(index_map, dtype=np.int64)
        if index_map.size != self.n:
            raise ValueError("index map length must equal design.n")
        return PoolDesign(n, self.test_ptr, index_map[self.members])

    def is_acyclic(self):
        """True iff the bipartite graph is a forest."""
        parent = list(range(self.n + self.m))

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for e in range(self.n_edges):
            u, v = find(int(self.members[e])), find(self.n + int(self.edge_test[e]))
            if u == v:
                return False
            parent[u] = v
        return True

    def __eq__(self, other):
        if not isinstance(other, PoolDesign):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.test_ptr, other.test_ptr)
                and np.array_equal(self.members, other.members))

    def __repr__(self):
        return f"PoolDesign(n={self.n}, m={self.m}, edges={self.n_edges})"


def concat_designs(designs, n):
    """Stack several designs over the same ``n`` samples into one."""
    ptrs, members, offset = [np.zeros(1, dtype=np.int64)], [], 0
    for d in designs:
        if d.n != n:
            raise ValueError("designs must share the sample set")
        ptrs.append(d.test_ptr[1:] + offset)
        members.append(d.members)
        offset += d.n_edges
    members = np.concatenate(members) if members else np.zeros(0, dtype=np.int64)
    return PoolDesign(n, np.concatenate(ptrs), members)


@dataclass(frozen=True)
class TestResults:
    __test__ = False  # not a pytest class

    outcomes: np.ndarray

    def __post_init__(self):
        out = np.asarray(self.outcomes, dtype=np.int8).copy()
        if out.ndim != 1 or np.any((out != 0) & (out != 1)):
            raise ValueError("outcomes must be a 1-d binary vector")
        out.setflags(write=False)
        object.__setattr__(self, "outcomes", out)

    @property
    def m(self):
        return self.outcomes.size


# --- operations ---------------------------------------------------------------

def sample_ground_truth(n, lam, rng):
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda={lam} outside [0, 1]")
    return GroundTruth((rng.random(n) < lam).astype(np.int8))


def pool_or(design, status):
    """Noiseless test readout: OR of member statuses per test."""
    status = np.asarray(status)
    if design.m == 0:
        return np.zeros(0, dtype=np.int8)
    return np.maximum.reduceat(status[design.members], design.test_ptr[:-1]).astype(np.int8)


def run_tests(design, truth, scen, rng):
    """Draw noisy outcomes for every test of ``design``."""
    if design.n != truth.n:
        raise ValueError("design and ground truth disagree on n")
    dirty = pool_or(design, truth.status).astype(bool)
    prob_pos = np.where(dirty, scen.q, 1.0 - scen.p)
    return TestResults((rng.random(design.m) < prob_pos).astype(np.int8))


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def log_posterior_weight(sigma, design, results, scen, priors=None):
    """Log of the unnormalised posterior weight of assignment ``sigma``.

    ``priors`` optionally replaces the uniform prior with per-sample values.
    Returns ``-inf`` when any factor vanishes.
    """
    sigma = np.asarray(sigma, dtype=np.int8)
    if sigma.shape != (design.n,):
        raise ValueError("sigma must have length n")
    if results.m != design.m:
        raise ValueError("results must have length m")
    pri = np.full(design.n, scen.lam) if priors is None else np.asarray(priors, dtype=float)
    logw = float(np.sum(np.where(sigma == 1, _log(pri), _log(1.0 - pri))))
    dirty = pool_or(design, sigma).astype(bool)
    pos = results.outcomes.astype(bool)
    factor = np.where(pos, np.where(dirty, scen.q, 1.0 - scen.p),
                      np.where(dirty, 1.0 - scen.q, scen.p))
    return logw + float(np.sum(_log(factor)))
