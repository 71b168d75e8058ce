"""Multi-stage testing pipelines: baselines and adaptive Belief Propagation.

Every pipeline runs against a :class:`Lab`, which owns the ground truth,
draws test outcomes from per-(stage, purpose) random streams and keeps the
audit trail that becomes a :class:`PipelineTrace`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import designs as D
from .bp import run_bp
from .model import (GroundTruth, TestResults, derive_rng, noise_name, run_tests,
                    sample_ground_truth)

HEALTHY_BELOW = 0.001
INFECTED_ABOVE = 0.999
LOW_RISK_BELOW = 0.124
PRIOR_CLAMP = 1e-6

# (m1/n, c) per algorithm, noise preset and prior; None marks n/a cells.
PRESETS = {
    "bp_individual": {
        "noiseless": {0.005: (0.05, None), 0.01: (0.08, None), 0.05: (0.23, None), 0.1: (0.3, None)},
        "moderate": {0.005: (0.09, None), 0.01: (0.12, None), 0.05: (0.37, None), 0.1: (0.7, None)},
        "high": {0.005: (0.11, None), 0.01: (0.16, None), 0.05: (0.45, None), 0.1: (0.34, None)},
    },
    "bp_inf_dorfman": {
        "noiseless": {0.005: (0.045, None), 0.01: (0.075, None), 0.05: (0.28, None), 0.1: (0.125, None)},
        "moderate": {0.005: (0.05, None), 0.01: (0.075, None), 0.05: (0.24, None), 0.1: (0.1, None)},
        "high": {0.005: (0.045, None), 0.01: (0.1, None), 0.05: (0.16, None), 0.1: (0.1, None)},
    },
    "abp1": {
        "noiseless": {0.005: (0.035, 1.0), 0.01: (0.075, 1.0), 0.05: (0.28, 1.0), 0.1: (0.125, 0.25)},
        "moderate": {0.005: (0.05, 2.0), 0.01: (0.085, 2.0), 0.05: (0.18, 2.0), 0.1: (0.15, 4.0)},
        "high": {0.005: (0.05, 2.0), 0.01: (0.1, 2.0), 0.05: (0.16, 2.0), 0.1: (0.1, 2.0)},
    },
    "abp2": {
        "moderate": {0.005: (0.075, 8.0), 0.01: (0.12, 8.0), 0.05: (0.4, 2.0), 0.1: (0.5, 2.0)},
        "high": {0.005: (0.02, 8.0), 0.01: (0.03, 8.0), 0.05: (0.36, 2.0), 0.1: (0.325, 2.0)},
    },
    "abp3": {
        "moderate": {0.005: (0.075, 8.0), 0.01: (0.085, 8.0), 0.05: (0.4, 2.0), 0.1: (0.55, 2.0)},
        "high": {0.005: (0.02, 8.0), 0.01: (0.03, 8.0), 0.05: (0.4, 2.0), 0.1: (0.5, 2.0)},
    },
}

COMBINE_RULES = ("and_infected", "or_infected", "majority")


@dataclass(frozen=True)
class StagePlanParams:
    m1_over_n: float
    c: float = None
    r: int = 1
    combine_rule: str = "and_infected"

    def __post_init__(self):
        if self.m1_over_n <= 0:
            raise ValueError("m1_over_n must be positive")
        if self.c is not None and self.c <= 0:
            raise ValueError("c must be positive")
        if self.r not in (1, 2, 3):
            raise ValueError("replication must be 1, 2 or 3")
        if self.combine_rule not in COMBINE_RULES:
            raise ValueError(f"unknown combine rule {self.combine_rule!r}")


def table_params(algorithm, scen, combine_rule="and_infected"):
    """Preset stage sizes for ``algorithm`` at the scenario's prior and noise."""
    noise = noise_name(scen)
    try:
        m1, c = PRESETS[algorithm][noise][scen.lam]
    except KeyError:
        raise ValueError(f"no preset for {algorithm} at lambda={scen.lam}, noise={noise}") from None
    r = {"abp2": 2, "abp3": 3}.get(algorithm, 1)
    rule = "majority" if r == 3 else combine_rule
    return StagePlanParams(m1, c, r, rule)


class Streams:
    """Counter-based random streams for one replicate."""

    def __init__(self, seed, rep=0):
        self.seed = int(seed)
        self.rep = int(rep)

    @classmethod
    def coerce(cls, rng):
        if isinstance(rng, Streams):
            return rng
        if isinstance(rng, np.random.Generator):
            return cls(int(rng.integers(2**63 - 1)))
        return cls(int(rng))

    def get(self, stage, purpose):
        return derive_rng(self.seed, self.rep, stage, purpose)


# --- trace -------------------------------------------------------------------------

@dataclass
class TestRecord:
    __test__ = False

    stage: int
    label: str
    design: object  # PoolDesign over all n samples
    outcomes: np.ndarray


@dataclass
class DecisionRecord:
    stage: int
    label: str
    samples: np.ndarray
    verdicts: np.ndarray


@dataclass
class PipelineTrace:
    name: str
    truth: GroundTruth
    tests: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    classification: np.ndarray = None
    deciding_stage: np.ndarray = None

    @property
    def n(self):
        return self.truth.n

    @property
    def tests_total(self):
        return sum(r.design.m for r in self.tests)

    def tests_by_stage(self, n_stages=3):
        out = [0] * n_stages
        for r in self.tests:
            out[r.stage - 1] += r.design.m
        return out

    def stage_fractions(self, n_stages=3):
        counts = np.bincount(self.deciding_stage, minlength=n_stages + 1)[1:n_stages + 1]
        return counts / self.n

    def sample_degrees(self):
        deg = np.zeros(self.n, dtype=np.int64)
        for r in self.tests:
            deg += r.design.sample_degrees
        return deg

    @property
    def gamma_max(self):
        return max((r.design.gamma_max for r in self.tests), default=0)


class Lab:
    """Runs tests on the hidden ground truth and records every step."""

    def __init__(self, name, truth, scen, streams):
        self.truth = truth
        self.scen = scen
        self.streams = streams
        self.trace = PipelineTrace(name, truth)
        self._cls = np.full(truth.n, -1, dtype=np.int8)
        self._stage = np.zeros(truth.n, dtype=np.int64)
        self._count = 0

    @property
    def n(self):
        return self.truth.n

    def rng(self, stage, purpose):
        return self.streams.get(stage, purpose)

    def run(self, design, stage, label):
        self._count += 1
        rng = self.streams.get(stage, f"tests:{label}:{self._count}")
        outcomes = run_tests(design, self.truth, self.scen, rng).outcomes
        self.trace.tests.append(TestRecord(stage, label, design, outcomes))
        return outcomes

    def individual(self, samples, stage, label):
        """One test per sample; returns the outcomes in the order given."""
        samples = np.asarray(samples, dtype=np.int64)
        if samples.size == 0:
            return np.zeros(0, dtype=np.int8)
        return self.run(D.individual_design(samples, self.n), stage, label)

    def decide(self, samples, verdicts, stage, label):
        samples = np.asarray(samples, dtype=np.int64)
        verdicts = np.broadcast_to(np.asarray(verdicts, dtype=np.int8), samples.shape)
        if samples.size == 0:
            return
        if np.any(self._cls[samples] >= 0):
            raise RuntimeError("sample decided twice")
        self._cls[samples] = verdicts
        self._stage[samples] = stage
        self.trace.decisions.append(DecisionRecord(stage, label, samples.copy(), verdicts.copy()))

    def finish(self):
        if np.any(self._cls < 0):
            raise RuntimeError(f"{int(np.sum(self._cls < 0))} samples left undecided")
        self.trace.classification = self._cls.copy()
        self.trace.deciding_stage = self._stage.copy()
        return self.trace


# --- stage building blocks ------------------------------------------------------------

@dataclass
class RiskPartition:
    decided_healthy: np.ndarray
    decided_infected: np.ndarray
    low_risk: np.ndarray
    high_risk: np.ndarray


def partition_by_marginal(marginals):
    marginals = np.asarray(marginals)
    healthy = marginals <= HEALTHY_BELOW
    infected = marginals >= INFECTED_ABOVE
    low = ~healthy & ~infected & (marginals < LOW_RISK_BELOW)
    high = ~healthy & ~infected & ~low
    return RiskPartition(*(np.flatnonzero(s) for s in (healthy, infected, low, high)))


def bp_first_stage(lab, m1_over_n):
    """Random biregular design on all samples plus BP at the uniform prior."""
    n, scen = lab.n, lab.scen
    m1 = max(1, round(m1_over_n * n))
    design = D.biregular_for(n, m1, scen.lam, lab.rng(1, "design"))
    outcomes = lab.run(design, 1, "biregular")
    _, marg, _ = run_bp(design, TestResults(outcomes), scen.lam, scen, rng=lab.rng(1, "bp"))
    return marg


def decide_polarised(lab, marginals, samples, stage, label):
    """Decide samples with polarised marginals; return the rest."""
    samples = np.asarray(samples, dtype=np.int64)
    marg = marginals[samples]
    lab.decide(samples[marg <= HEALTHY_BELOW], 0, stage, f"{label}:healthy")
    lab.decide(samples[marg >= INFECTED_ABOVE], 1, stage, f"{label}:infected")
    return samples[(marg > HEALTHY_BELOW) & (marg < INFECTED_ABOVE)]


def test_individually(lab, samples, stage, label):
    outcomes = lab.individual(samples, stage, label)
    lab.decide(samples, outcomes, stage, label)
    return outcomes.size


@dataclass
class LowRiskResult:
    decided: np.ndarray
    unresolved: np.ndarray
    tests_used: int


def stage2_low_risk(lab, low, marginals, c, stage=2):
    """Biregular retest of the low-risk group with first-stage marginals as priors.

    Polarised samples are decided; the rest are tested individually in the
    following stage, the individual outcome being final.
    """
    low = np.asarray(low, dtype=np.int64)
    if low.size == 0:
        return LowRiskResult(low, low, 0)
    scen, n_low = lab.scen, low.size
    lam_low = float(np.mean(marginals[low]))
    raw_m = c * lam_low * n_low * math.log(n_low)
    if raw_m < 1 or round(math.log(2) / lam_low) > n_low:
        used = test_individually(lab, low, stage, "low-risk:individual")
        return LowRiskResult(low, low[:0], used)
    m_low = round(raw_m)
    local = D.biregular_for(n_low, m_low, lam_low, lab.rng(stage, "low-risk:design"))
    outcomes = lab.run(local.embed(low, lab.n), stage, "low-risk:biregular")
    priors = np.clip(marginals[low], PRIOR_CLAMP, 1.0 - PRIOR_CLAMP)
    _, marg, _ = run_bp(local, TestResults(outcomes), priors, scen, rng=lab.rng(stage, "low-risk:bp"))
    full = np.zeros(lab.n)
    full[low] = marg
    rest = decide_polarised(lab, full, low, stage, "low-risk:bp")
    used = local.m + test_individually(lab, rest, stage + 1, "low-risk:individual")
    return LowRiskResult(np.setdiff1d(low, rest), rest, used)


def informative_dorfman_round(lab, samples, plan, stage, label):
    """One informative Dorfman procedure; returns (verdicts, deciding stage) per sample.

    Pools read negative clear all members; members of positive pools and the
    plan's single samples are decided by their individual test.
    """
    samples = np.asarray(samples, dtype=np.int64)
    verdict = np.zeros(samples.size, dtype=np.int8)
    when = np.full(samples.size, stage, dtype=np.int64)
    pools = [samples[p] for p in plan.pools]
    singles = [[s] for s in samples[plan.individual]]
    if not pools and not singles:
        return verdict, when
    design = D.PoolDesign.from_pools(lab.n, pools + singles)
    outcomes = lab.run(design, stage, f"{label}:pools")
    k = len(pools)
    verdict[plan.individual] = outcomes[k:]
    retest = [plan.pools[i] for i in range(k) if outcomes[i] == 1]
    if retest:
        local = np.concatenate(retest)
        follow = lab.individual(samples[local], stage + 1, f"{label}:individual")
        verdict[local] = follow
        when[local] = stage + 1
    return verdict, when


def combine_verdicts(verdicts, rule):
    v = np.asarray(verdicts)
    if v.shape[0] == 1:
        return v[0]
    if rule == "and_infected":
        return v.min(axis=0)
    if rule == "or_infected":
        return v.max(axis=0)
    if rule == "majority":
        return (2 * v.sum(axis=0) > v.shape[0]).astype(np.int8)
    raise ValueError(f"unknown combine rule {rule!r}")


@dataclass
class HighRiskResult:
    verdicts: np.ndarray
    per_procedure: np.ndarray
    tests_used: int


def stage2_high_risk(lab, high, marginals, r=1, combine_rule="and_infected", stage=2):
    """``r`` independent informative Dorfman procedures on the high-risk group."""
    high = np.asarray(high, dtype=np.int64)
    if high.size == 0:
        return HighRiskResult(np.zeros(0, dtype=np.int8), np.zeros((r, 0), dtype=np.int8), 0)
    before = lab.trace.tests_total
    plan = D.informative_dorfman_plan(marginals[high], lab.scen)
    runs = [informative_dorfman_round(lab, high, plan, stage, f"high-risk:dorfman{i + 1}")
            for i in range(r)]
    per = np.array([v for v, _ in runs], dtype=np.int8)
    when = np.max([w for _, w in runs], axis=0)
    rule = "majority" if r == 3 else combine_rule
    final = combine_verdicts(per, rule)
    for st in np.unique(when):
        sel = when == st
        lab.decide(high[sel], final[sel], int(st), "high-risk:dorfman")
    return HighRiskResult(final, per, lab.trace.tests_total - before)


# --- pipelines ------------------------------------------------------------------------

def _individual(lab, params):
    test_individually(lab, np.arange(lab.n), 1, "individual")


def _repeated(lab, reps):
    n = lab.n
    outcomes = lab.run(D.repeated_individual_design(n, reps), 1, f"individual x{reps}")
    votes = outcomes.reshape(reps, n)
    if reps == 2:
        verdict = votes.min(axis=0)   # infected only if both positive
    else:
        verdict = (2 * votes.sum(axis=0) > reps).astype(np.int8)
    lab.decide(np.arange(n), verdict, 1, "individual:vote")


def _dorfman2(lab, params):
    scheme = D.build_dorfman2(lab.n, lab.scen.lam)
    outcomes = lab.run(scheme.stage1, 1, "dorfman:pools")
    _settle_pools(lab, scheme.stage1, outcomes, 1, "dorfman")
    test_individually(lab, scheme.followup(outcomes), 2, "dorfman:individual")


def _settle_pools(lab, design, outcomes, stage, label):
    """Decide negative pools as healthy and single-member pools by their outcome."""
    sizes = design.test_sizes
    for a in range(design.m):
        members = design.members[design.test_ptr[a]:design.test_ptr[a + 1]]
        if sizes[a] == 1:
            lab.decide(members, outcomes[a], stage, f"{label}:single")
        elif outcomes[a] == 0:
            lab.decide(members, 0, stage, f"{label}:negative")


def _dorfman3(lab, params):
    scheme = D.build_dorfman3(lab.n, lab.scen.lam)
    out1 = lab.run(scheme.stage1, 1, "dorfman3:pools")
    _settle_pools(lab, scheme.stage1, out1, 1, "dorfman3")
    sub = scheme.subpools(out1)
    if sub.m:
        out2 = lab.run(sub, 2, "dorfman3:subpools")
        _settle_pools(lab, sub, out2, 2, "dorfman3:sub")
        test_individually(lab, scheme.followup(sub, out2), 3, "dorfman3:individual")


def _grid(lab, params):
    scheme = D.build_grid(lab.n, lab.scen.lam)
    outcomes = lab.run(scheme.stage1, 1, "grid:pools")
    follow = scheme.followup(outcomes)
    lab.decide(np.setdiff1d(np.arange(lab.n), follow), 0, 1, "grid:cleared")
    test_individually(lab, follow, 2, "grid:individual")


def _bp_individual(lab, params):
    marg = bp_first_stage(lab, params.m1_over_n)
    rest = decide_polarised(lab, marg, np.arange(lab.n), 1, "bp")
    test_individually(lab, rest, 2, "bp:individual")


def _bp_inf_dorfman(lab, params):
    marg = bp_first_stage(lab, params.m1_over_n)
    rest = decide_polarised(lab, marg, np.arange(lab.n), 1, "bp")
    plan = D.informative_dorfman_plan(marg[rest], lab.scen)
    verdict, when = informative_dorfman_round(lab, rest, plan, 2, "dorfman")
    for st in np.unique(when):
        lab.decide(rest[when == st], verdict[when == st], int(st), "dorfman")


def _plain_bp(lab, params):
    marg = bp_first_stage(lab, params.m1_over_n)
    lab.decide(np.arange(lab.n), (marg > 0.5).astype(np.int8), 1, "bp:threshold")


def _adaptive(lab, params):
    if params.c is None:
        raise ValueError("adaptive pipeline needs the stage-2 constant c")
    marg = bp_first_stage(lab, params.m1_over_n)
    part = partition_by_marginal(marg)
    lab.decide(part.decided_healthy, 0, 1, "bp:healthy")
    lab.decide(part.decided_infected, 1, 1, "bp:infected")
    stage2_low_risk(lab, part.low_risk, marg, params.c)
    stage2_high_risk(lab, part.high_risk, marg, params.r, params.combine_rule)


PIPELINES = {
    "individual": _individual,
    "individual2": lambda lab, params: _repeated(lab, 2),
    "individual3": lambda lab, params: _repeated(lab, 3),
    "dorfman2": _dorfman2,
    "dorfman3": _dorfman3,
    "grid": _grid,
    "bp_individual": _bp_individual,
    "bp_inf_dorfman": _bp_inf_dorfman,
    "plain_bp": _plain_bp,
    "abp1": _adaptive,
    "abp2": _adaptive,
    "abp3": _adaptive,
}
BASELINES = tuple(k for k in PIPELINES if not k.startswith("abp"))
NEEDS_PARAMS = ("bp_individual", "bp_inf_dorfman", "plain_bp", "abp1", "abp2", "abp3")


def resolve_params(name, scen, params=None):
    if name not in PIPELINES:
        raise ValueError(f"unknown design {name!r}")
    if name not in NEEDS_PARAMS:
        return None
    if params is not None:
        if isinstance(params, dict):
            params = StagePlanParams(**params)
        return params
    # plain BP has no preset of its own; it shares the BP + individual stage 1
    return table_params("bp_individual" if name == "plain_bp" else name, scen)


def run_pipeline(name, scen, rng, n=None, truth=None, params=None):
    """Run design ``name`` on ``truth`` (drawn from the prior if omitted)."""
    params = resolve_params(name, scen, params)
    streams = Streams.coerce(rng)
    if truth is None:
        if n is None:
            raise ValueError("need n or a ground truth")
        truth = sample_ground_truth(n, scen.lam, streams.get(0, "truth"))
    lab = Lab(name, truth, scen, streams)
    PIPELINES[name](lab, params)
    return lab.finish()


def run_baseline(name, n, scen, params=None, rng=0, truth=None):
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}")
    return run_pipeline(name, scen, rng, n=n, truth=truth, params=params)


def run_adaptive_bp(n, scen, variant, rng=0, truth=None, params=None, combine_rule="and_infected"):
    """Adaptive BP with 1, 2 or 3 replicated high-risk Dorfman procedures."""
    if variant not in (1, 2, 3):
        raise ValueError("variant must be 1, 2 or 3")
    name = f"abp{variant}"
    if params is None:
        params = table_params(name, scen, combine_rule)
    return run_pipeline(name, scen, rng, n=n, truth=truth, params=params)


# --- trace text format ------------------------------------------------------------------

def format_trace(trace):
    """Line-oriented audit record; see README for the layout."""
    lines = ["trace v1", f"design {trace.name}", f"n {trace.n}",
             "truth " + "".join(map(str, trace.truth.status.tolist()))]
    stages = sorted({r.stage for r in trace.tests} | {r.stage for r in trace.decisions})
    for st in stages:
        lines.append(f"stage {st}")
        for r in trace.tests:
            if r.stage != st:
                continue
            lines.append(f"tests {r.label} {r.design.m}")
            for t, o in zip(r.design.tests, r.outcomes):
                lines.append(f"{int(o)} " + " ".join(map(str, t.tolist())))
        for r in trace.decisions:
            if r.stage != st:
                continue
            pairs = " ".join(f"{s}:{v}" for s, v in zip(r.samples.tolist(), r.verdicts.tolist()))
            lines.append(f"decide {r.label} {pairs}".rstrip())
        lines.append("end")
    lines.append("final " + "".join(map(str, trace.classification.tolist())))
    lines.append("tests_total " + str(trace.tests_total))
    return "\n".join(lines) + "\n"


def parse_trace(text):
    lines = iter(text.splitlines())
    if next(lines) != "trace v1":
        raise ValueError("not a trace record")
    name = next(lines).split(" ", 1)[1]
    n = int(next(lines).split()[1])
    truth = GroundTruth([int(c) for c in next(lines).split(" ", 1)[1]] if n else [])
    trace = PipelineTrace(name, truth)
    stage = None
    cls = np.full(n, -1, dtype=np.int8)
    when = np.zeros(n, dtype=np.int64)
    for line in lines:
        head, _, rest = line.partition(" ")
        if head == "stage":
            stage = int(rest)
        elif head == "tests":
            label, m = rest.rsplit(" ", 1)
            rows = [next(lines).split() for _ in range(int(m))]
            design = D.PoolDesign.from_pools(n, [[int(v) for v in r[1:]] for r in rows])
            outcomes = np.array([int(r[0]) for r in rows], dtype=np.int8)
            trace.tests.append(TestRecord(stage, label, design, outcomes))
        elif head == "decide":
            label, _, pairs = rest.partition(" ")
            sv = [p.split(":") for p in pairs.split()]
            samples = np.array([int(s) for s, _ in sv], dtype=np.int64)
            verdicts = np.array([int(v) for _, v in sv], dtype=np.int8)
            trace.decisions.append(DecisionRecord(stage, label, samples, verdicts))
            cls[samples] = verdicts
            when[samples] = stage
        elif head == "final":
            final = np.array([int(c) for c in rest], dtype=np.int8)
            if not np.array_equal(final, cls):
                raise ValueError("final classification disagrees with decisions")
    trace.classification = cls
    trace.deciding_stage = when
    return trace
