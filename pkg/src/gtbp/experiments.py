"""Metrics, closed-form Dorfman expectations and the replicated experiment harness."""

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import designs as D
from .bp import run_bp, entropy_estimate
from .model import (NOISE_PRESETS, PoolDesign, Scenario, TestResults, derive_rng,
                    run_tests, sample_ground_truth)
from . import pipeline as PL

ROW_COLUMNS = ("design", "n", "lambda", "p", "q", "rep", "tests_total", "fp", "fn", "fpr", "fnr",
               "stage1_frac", "stage2_frac", "stage3_frac", "gamma_max", "delta_max", "delta_avg")
METRIC_COLUMNS = ROW_COLUMNS[6:]


# --- metrics ----------------------------------------------------------------------

@dataclass
class ErrorCounts:
    fp: int
    fn: int
    fpr: float
    fnr: float
    no_healthy: bool   # rate reported as 0 because the denominator vanished
    no_infected: bool


def evaluate(classification, truth):
    cls = np.asarray(classification)
    status = truth.status if hasattr(truth, "status") else np.asarray(truth)
    if cls.shape != status.shape:
        raise ValueError("classification and truth differ in length")
    healthy = int(np.sum(status == 0))
    infected = status.size - healthy
    fp = int(np.sum((cls == 1) & (status == 0)))
    fn = int(np.sum((cls == 0) & (status == 1)))
    return ErrorCounts(fp, fn, fp / max(1, healthy), fn / max(1, infected),
                       healthy == 0, infected == 0)


@dataclass
class RunMetrics:
    design: str
    n: int
    lam: float
    p: float
    q: float
    rep: int
    tests_total: int
    fp: int
    fn: int
    fpr: float
    fnr: float
    stage1_frac: float
    stage2_frac: float
    stage3_frac: float
    gamma_max: int
    delta_max: int
    delta_avg: float

    @property
    def tests_per_n(self):
        return self.tests_total / self.n

    def row(self):
        return [self.design, self.n, _fmt(self.lam), _fmt(self.p), _fmt(self.q), self.rep,
                self.tests_total, self.fp, self.fn, _fmt(self.fpr), _fmt(self.fnr),
                _fmt(self.stage1_frac), _fmt(self.stage2_frac), _fmt(self.stage3_frac),
                self.gamma_max, self.delta_max, _fmt(self.delta_avg)]


def _fmt(x):
    return f"{x:.10g}"


def trace_metrics(trace, scen, rep=0):
    err = evaluate(trace.classification, trace.truth)
    frac = trace.stage_fractions(3)
    deg = trace.sample_degrees()
    return RunMetrics(trace.name, trace.n, scen.lam, scen.p, scen.q, rep, trace.tests_total,
                      err.fp, err.fn, err.fpr, err.fnr, *map(float, frac),
                      int(trace.gamma_max), int(deg.max(initial=0)), float(deg.mean()))


# --- closed forms --------------------------------------------------------------------

def info_lower_bound(n, lam):
    """Counting bound n·h2(λ): tests needed to single out one of ~2^(n h2) likely states."""
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    return n * -(lam * math.log2(lam) + (1.0 - lam) * math.log2(1.0 - lam))


@dataclass(frozen=True)
class DorfmanExpectation:
    tests: float
    fp: float
    fn: float


def _pool_sizes(n, s):
    return [len(c) for c in D.consecutive_pools(np.arange(n), s)]


def _two_stage(n, lam, scen, s):
    p, q, h = scen.p, scen.q, 1.0 - lam
    tests = fp = fn = 0.0
    for size in _pool_sizes(n, s):
        if size == 1:
            tests += 1
            fp += h * (1 - p)
            fn += lam * (1 - q)
            continue
        tests += 1 + size * (q * (1 - h ** size) + (1 - p) * h ** size)
        # pool outcome given that this member is healthy
        pos_h = q * (1 - h ** (size - 1)) + (1 - p) * h ** (size - 1)
        fp += size * h * pos_h * (1 - p)
        fn += size * lam * (1 - q * q)
    return DorfmanExpectation(tests, fp, fn)


def _three_stage(n, lam, scen, s1, s2):
    p, q, h = scen.p, scen.q, 1.0 - lam
    tests = fp = fn = 0.0
    for size in _pool_sizes(n, s1):
        tests += 1
        if size == 1:
            fp += h * (1 - p)
            fn += lam * (1 - q)
            continue
        pool_pos = q * (1 - h ** size) + (1 - p) * h ** size
        for sub in _pool_sizes(size, s2):
            tests += pool_pos
            if sub == 1:
                fp += h * (1 - p) * (q * (1 - h ** (size - 1)) + (1 - p) * h ** (size - 1))
                fn += lam * (1 - q * q)
                continue
            # sub dirty / sub clean but pool dirty / all clean
            a = 1 - h ** sub
            b = h ** sub * (1 - h ** (size - sub))
            c = h ** size
            tests += sub * (a * q * q + b * q * (1 - p) + c * (1 - p) ** 2)
            # same split seen from a healthy member
            a = 1 - h ** (sub - 1)
            b = h ** (sub - 1) * (1 - h ** (size - sub))
            c = h ** (size - 1)
            fp += sub * h * (1 - p) * (a * q * q + b * q * (1 - p) + c * (1 - p) ** 2)
            fn += sub * lam * (1 - q ** 3)
    return DorfmanExpectation(tests, fp, fn)


def _stagewise(n, lam, scen, sizes, tests):
    """Treats each stage's outcome for a healthy member as an independent
    channel use with the pool's unconditional positivity."""
    p, q, h = scen.p, scen.q, 1.0 - lam
    carry = 1.0 - p
    for s in sizes:
        carry *= q * (1 - h ** s) + (1 - p) * h ** s
    k = len(sizes) + 1
    return DorfmanExpectation(tests, n * h * carry, n * lam * (1 - q ** k))


def dorfman_expectations(n, lam, scen, stages=2, method="exact"):
    """Expected (tests, FP, FN) of Dorfman testing with the default pool sizes.

    ``exact`` conditions on every member's pool composition; ``stagewise``
    is the coarser product-of-stages approximation.
    """
    if stages == 2:
        s = min(D.dorfman_pool_size(lam), n)
        ex = _two_stage(n, lam, scen, s)
        sizes = [s]
    elif stages == 3:
        s1, s2 = D.dorfman3_sizes(lam)
        s1 = min(s1, n)
        ex = _three_stage(n, lam, scen, s1, s2)
        sizes = [s1, s2]
    else:
        raise ValueError("stages must be 2 or 3")
    if method == "exact":
        return ex
    if method == "stagewise":
        return _stagewise(n, lam, scen, sizes, ex.tests)
    raise ValueError(f"unknown method {method!r}")


# --- harness ----------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    n: int
    scen: Scenario
    design: str
    params: object = None   # StagePlanParams or dict; None uses presets
    reps: int = 1
    seed: int = 0
    out: str = None
    workers: int = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 1:
            raise ValueError("n must be positive")
        PL.resolve_params(self.design, self.scen, self.params)  # fail early


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    errors: list = field(default_factory=list)  # (rep, message)

    def column(self, name):
        return np.array([getattr(r, "lam" if name == "lambda" else name) for r in self.rows])

    def summary(self):
        out = {"design": self.config.design, "n": self.config.n, "lambda": self.config.scen.lam,
               "p": self.config.scen.p, "q": self.config.scen.q, "reps": len(self.rows),
               "failed": len(self.errors)}
        for col in METRIC_COLUMNS:
            vals = self.column(col).astype(float)
            out[col + "_mean"] = float(vals.mean()) if vals.size else math.nan
            out[col + "_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return out


def default_workers():
    return max(1, min(4, os.cpu_count() or 1))


def _one_rep(config, rep):
    streams = PL.Streams(config.seed, rep)
    try:
        trace = PL.run_pipeline(config.design, config.scen, streams, n=config.n,
                                params=config.params)
    except Exception as exc:  # recorded per rep, not fatal
        return rep, None, f"{type(exc).__name__}: {exc}"
    return rep, trace_metrics(trace, config.scen, rep), None


def run_experiment(config):
    workers = config.workers or default_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = list(pool.map(lambda r: _one_rep(config, r), range(config.reps)))
    done.sort(key=lambda t: t[0])
    result = ExperimentResult(config, [m for _, m, _ in done if m is not None],
                              [(r, e) for r, _, e in done if e is not None])
    if config.out:
        write_rows(result.rows, config.out)
        write_summary([result], summary_path(config.out))
    return result


def summary_path(path):
    root, ext = os.path.splitext(path)
    return f"{root}_summary{ext or '.csv'}"


def format_rows(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_COLUMNS)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def write_rows(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_rows(rows))


def read_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def format_summary(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for res in results:
        s = res.summary()
        if header is None:
            header = list(s)
            w.writerow(header)
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in s.values()])
    return buf.getvalue()


def write_summary(results, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_summary(results))


# --- entropy curve -----------------------------------------------------------------

def entropy_curve(n, lam, scen, m_grid, reps=1, seed=0):
    """Bethe entropy after BP on a biregular design, per number of tests.

    Returns rows ``(m, mean, std, reps)``.
    """
    m_grid = [int(m) for m in m_grid]
    if any(m < 0 for m in m_grid):
        raise ValueError("test counts must be non-negative")
    rows = []
    for m in m_grid:
        vals = []
        for rep in range(reps):
            rng = derive_rng(seed, rep, m, "entropy")
            truth = sample_ground_truth(n, lam, rng)
            design = D.biregular_for(n, m, lam, rng) if m else PoolDesign.empty(n)
            results = run_tests(design, truth, scen, rng)
            state, _, _ = run_bp(design, results, lam, scen, rng=rng)
            vals.append(entropy_estimate(state, design, results, scen))
        vals = np.array(vals)
        rows.append((m, float(vals.mean()), float(vals.std(ddof=1)) if reps > 1 else 0.0, reps))
    return rows


def write_entropy_curve(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "entropy_mean", "entropy_std", "reps"])
        for m, mean, std, reps in rows:
            w.writerow([m, _fmt(mean), _fmt(std), reps])


def entropy_slope(rows, max_m=None):
    """Least-squares slope of mean entropy against m."""
    pts = [(m, e) for m, e, _, _ in rows if max_m is None or m <= max_m]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    m, e = np.array(pts, dtype=float).T
    return float(np.polyfit(m, e, 1)[0])


# --- config files ------------------------------------------------------------------

def parse_config(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {i}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {i}: empty key")
        out[key.replace("-", "_")] = value
    return out


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def parse_noise(text):
    """``none``/``noiseless``, ``moderate``, ``high`` or ``custom:p,q``."""
    text = text.strip()
    if text == "none":
        text = "noiseless"
    if text in NOISE_PRESETS:
        return NOISE_PRESETS[text]
    if text.startswith("custom:"):
        try:
            p, q = (float(v) for v in text[len("custom:"):].split(","))
        except ValueError:
            raise ValueError(f"bad custom noise {text!r}; expected custom:p,q") from None
        return p, q
    raise ValueError(f"unknown noise {text!r}")
