"""Belief Propagation for noisy group testing.

Messages live on the edges of a :class:`~gtbp.model.PoolDesign`.  Each edge
carries a sample-to-test and a test-to-sample distribution on {0, 1}; they
are stored as log-probabilities so that pools of a hundred or more members
and hard (noiseless) evidence are handled without underflow.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


class ContradictoryEvidence(RuntimeError):
    """Both states of a message received zero weight (conflicting hard factors)."""


def as_priors(priors, n):
    """Broadcast a scalar prior or validate a per-sample prior vector."""
    pri = np.asarray(priors, dtype=float)
    if pri.ndim == 0:
        pri = np.full(n, float(pri))
    if pri.shape != (n,):
        raise ValueError("priors must be a scalar or have length n")
    if np.any((pri < 0) | (pri > 1)):
        raise ValueError("priors must lie in [0, 1]")
    return pri


def _log_pair(prob1):
    with np.errstate(divide="ignore"):
        return np.log1p(-prob1), np.log(prob1)


@dataclass
class MessageState:
    """Log-domain BP messages indexed by edge, plus the per-sample priors."""

    lx0: np.ndarray
    lx1: np.ndarray
    la0: np.ndarray
    la1: np.ndarray
    priors: np.ndarray

    @property
    def sample_to_test(self):
        return np.exp(np.column_stack([self.lx0, self.lx1]))

    @property
    def test_to_sample(self):
        return np.exp(np.column_stack([self.la0, self.la1]))

    def log_priors(self):
        return _log_pair(self.priors)

    def copy(self):
        return MessageState(self.lx0.copy(), self.lx1.copy(), self.la0.copy(),
                            self.la1.copy(), self.priors.copy())


@dataclass
class BPConfig:
    """Schedule settings.  ``max_updates=None`` means 100 updates per edge."""

    max_updates: int = None
    tol: float = 1e-8
    schedule: str = "random_sequential"
    init: str = "prior"

    def __post_init__(self):
        if self.schedule not in ("random_sequential", "parallel"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.init not in ("prior", "truth"):
            raise ValueError(f"unknown init mode {self.init!r}")

    def updates_for(self, n_edges):
        T = 100 * n_edges if self.max_updates is None else int(self.max_updates)
        if T < n_edges:
            raise ValueError("max_updates must be at least the number of edges")
        return T


@dataclass
class BPDiagnostics:
    updates: int = 0
    converged: bool = False
    max_change: float = 0.0
    windows: list = field(default_factory=list)        # (update count, max change)
    mean_marginal: list = field(default_factory=list)  # one entry per window

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["update", "max_change"])
            w.writerows((u, repr(c)) for u, c in self.windows)


TRUTH_CLAMP = 1e-12


def init_messages(design, priors, scen, mode="prior", truth=None, results=None):
    """Initial messages.

    ``prior`` mode starts every sample-to-test message at the sample's prior,
    ``truth`` mode at its (clamped) true status.  Test-to-sample messages are
    then filled by one application of the test update, which needs
    ``results``; without them they are left uniform.
    """
    pri = as_priors(priors, design.n)
    if mode == "prior":
        start = pri[design.members]
    elif mode == "truth":
        if truth is None:
            raise ValueError("truth initialisation requires a ground truth")
        status = np.asarray(getattr(truth, "status", truth), dtype=float)
        start = np.clip(status, TRUTH_CLAMP, 1.0 - TRUTH_CLAMP)[design.members]
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    lx0, lx1 = _log_pair(start)
    E = design.n_edges
    la0 = np.full(E, math.log(0.5))
    la1 = la0.copy()
    state = MessageState(lx0, lx1, la0, la1, pri)
    if results is not None:
        _, bad = K.all_t2s(design.test_ptr, design.edge_test, state.lx0,
                           results.outcomes, scen.p, scen.q, state.la0, state.la1)
        if bad:
            raise ContradictoryEvidence(f"{bad} test messages without support at init")
    return state


def update_sample_to_test(state, design, edge):
    """Recompute one sample-to-test message in place and return its pair."""
    lp0, lp1 = state.log_priors()
    l0, l1, ok = K.s2t_update(edge, design.members, design.sample_ptr, design.sample_edges,
                              lp0, lp1, state.la0, state.la1)
    if not ok:
        raise ContradictoryEvidence(f"sample message on edge {edge} has no support")
    state.lx0[edge], state.lx1[edge] = l0, l1
    return math.exp(l0), math.exp(l1)


def update_test_to_sample(state, design, edge, outcome, scen):
    """Recompute one test-to-sample message in place and return its pair.

    ``outcome`` is the result of the edge's test, or a full results object.
    """
    outcomes = getattr(outcome, "outcomes", None)
    if outcomes is None:
        outcomes = np.zeros(design.m, dtype=np.int8)
        outcomes[design.edge_test[edge]] = int(outcome)
    l0, l1, ok = K.t2s_update(edge, design.test_ptr, design.edge_test, state.lx0,
                              outcomes, scen.p, scen.q)
    if not ok:
        raise ContradictoryEvidence(f"test message on edge {edge} has no support")
    state.la0[edge], state.la1[edge] = l0, l1
    return math.exp(l0), math.exp(l1)


def compute_marginals(state, design):
    lp0, lp1 = state.log_priors()
    marg, bad = K.marginals(design.sample_ptr, design.sample_edges, lp0, lp1, state.la0, state.la1)
    if bad:
        raise ContradictoryEvidence(f"{bad} samples with contradictory evidence")
    return marg


def run_bp(design, results, priors, scen, config=None, rng=None, truth=None):
    """Iterate the BP equations; returns ``(state, marginals, diagnostics)``.

    The default random-sequential schedule picks a uniform edge and a fair
    coin per step (heads: sample-to-test, tails: test-to-sample).  It stops
    after ``max_updates`` steps, or earlier once a window of one update per
    edge changes no message by more than ``tol``.
    """
    config = config or BPConfig()
    if results.m != design.m:
        raise ValueError("results length differs from design.m")
    state = init_messages(design, priors, scen, config.init, truth=truth, results=results)
    diag = BPDiagnostics()
    E = design.n_edges
    if E == 0:
        diag.converged = True
        return state, state.priors.copy(), diag
    lp0, lp1 = state.log_priors()
    T = config.updates_for(E)
    outcomes = results.outcomes
    d = design
    if config.schedule == "random_sequential":
        if rng is None:
            raise ValueError("random-sequential schedule needs an rng")
        done = 0
        while done < T:
            size = min(E, T - done)
            picks = rng.integers(0, E, size=size)
            coins = rng.random(size) < 0.5
            change, bad = K.sequential_window(picks, coins, d.test_ptr, d.members, d.edge_test,
                                              d.sample_ptr, d.sample_edges, lp0, lp1, outcomes,
                                              scen.p, scen.q, state.lx0, state.lx1,
                                              state.la0, state.la1)
            if bad:
                raise ContradictoryEvidence(f"{bad} updates without support")
            done += size
            diag.windows.append((done, change))
            diag.mean_marginal.append(float(np.mean(compute_marginals(state, d))))
            diag.max_change = change
            if size == E and change < config.tol:
                # a window can miss edges; only stop if no update would move
                res = K.residual(d.test_ptr, d.members, d.edge_test, d.sample_ptr,
                                 d.sample_edges, lp0, lp1, outcomes, scen.p, scen.q,
                                 state.lx0, state.lx1, state.la0, state.la1)
                if res < config.tol:
                    diag.max_change = res
                    diag.converged = True
                    break
    else:
        rounds = max(1, T // E)
        for r in range(rounds):
            c1, b1 = K.all_s2t(d.members, d.sample_ptr, d.sample_edges, lp0, lp1,
                               state.la0, state.la1, state.lx0, state.lx1)
            c2, b2 = K.all_t2s(d.test_ptr, d.edge_test, state.lx0, outcomes, scen.p, scen.q,
                               state.la0, state.la1)
            if b1 or b2:
                raise ContradictoryEvidence("parallel sweep without support")
            change = max(c1, c2)
            diag.windows.append(((r + 1) * E, change))
            diag.mean_marginal.append(float(np.mean(compute_marginals(state, d))))
            diag.max_change = change
            if change < config.tol:
                diag.converged = True
                break
        done = len(diag.windows) * E
    diag.updates = done
    return state, compute_marginals(state, d), diag


def run_bp_parallel_diagnostic(design, results, priors, scen, rounds):
    """Mean deviation of the sample-to-test messages from the prior, per synchronous round.

    Each round recomputes every test-to-sample message from the current
    sample-to-test messages and then every sample-to-test message.  A
    prior-initialised run starts at zero deviation; the returned array holds
    rounds 1..``rounds``.
    """
    state = init_messages(design, priors, scen, "prior")
    d = design
    lp0, lp1 = state.log_priors()
    out = np.zeros(rounds)
    if d.n_edges == 0:
        return out
    base = state.priors[d.members]
    for r in range(rounds):
        K.all_t2s(d.test_ptr, d.edge_test, state.lx0, results.outcomes, scen.p, scen.q,
                  state.la0, state.la1)
        K.all_s2t(d.members, d.sample_ptr, d.sample_edges, lp0, lp1,
                  state.la0, state.la1, state.lx0, state.lx1)
        out[r] = float(np.mean(np.exp(state.lx1) - base))
    return out


def write_deviation_csv(deviations, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "mean_deviation"])
        w.writerows((i + 1, repr(float(v))) for i, v in enumerate(deviations))


# --- free energy and entropy ---------------------------------------------------------

def _xlogy(w, logv):
    return w * np.where(w > 0, logv, 0.0)


def _test_terms(state, design, results, scen):
    """Per-test log normaliser and the log-products of healthy messages."""
    log_pi = np.bincount(design.edge_test, weights=state.lx0, minlength=design.m)
    # -inf entries make bincount sums -inf, which is the right product
    log_pi = np.minimum(log_pi, 0.0)
    log_z = np.array([K.logaddexp(*_clean_dirty(lp, o, scen)) for lp, o in
                      zip(log_pi, results.outcomes)]) if design.m else np.zeros(0)
    return log_pi, log_z


def _clean_dirty(log_pi, outcome, scen):
    """Log weights of the 'pool clean' and 'pool dirty' branches of a test belief."""
    if outcome == 0:
        f_clean, f_dirty = scen.p, 1.0 - scen.q
    else:
        f_clean, f_dirty = 1.0 - scen.p, scen.q
    lc = K.safe_log(f_clean) + log_pi if f_clean > 0 else -math.inf
    ld = K.safe_log(f_dirty) + K.log1m_exp(log_pi) if f_dirty > 0 else -math.inf
    return lc, ld


def bethe_free_energy(state, design, results, scen, literal=False):
    """Bethe approximation to the log normaliser of the posterior.

    The variable terms weight each state by the sample's prior.  With
    ``literal=True`` the prior weight is dropped from the variable terms,
    which no longer gives zero for a design without tests.
    """
    lp0, lp1 = state.log_priors()
    if literal:
        lp0 = np.zeros_like(lp0)
        lp1 = np.zeros_like(lp1)
    in0 = np.bincount(design.members, weights=state.la0, minlength=design.n)
    in1 = np.bincount(design.members, weights=state.la1, minlength=design.n)
    b_var = np.logaddexp(lp0 + in0, lp1 + in1)
    _, b_test = _test_terms(state, design, results, scen)
    b_edge = np.logaddexp(state.lx0 + state.la0, state.lx1 + state.la1)
    return float(b_var.sum() + b_test.sum() - b_edge.sum())


def entropy_estimate(state, design, results, scen):
    """Bethe entropy of the posterior in nats.

    log-normaliser minus the expected log weight, the expectation taken
    under the BP beliefs for the prior factors and the test factors.
    """
    bethe = bethe_free_energy(state, design, results, scen)
    marg = compute_marginals(state, design)
    pri = state.priors
    with np.errstate(divide="ignore", invalid="ignore"):
        prior_term = _xlogy(marg, np.log(pri)) + _xlogy(1.0 - marg, np.log1p(-pri))
    log_pi, log_z = _test_terms(state, design, results, scen)
    test_term = 0.0
    for lp, lz, o in zip(log_pi, log_z, results.outcomes):
        lc, ld = _clean_dirty(lp, o, scen)
        f_clean, f_dirty = (scen.p, 1.0 - scen.q) if o == 0 else (1.0 - scen.p, scen.q)
        for lw, f in ((lc, f_clean), (ld, f_dirty)):
            if lw > -math.inf:
                test_term += math.exp(lw - lz) * math.log(f)
    return float(bethe - prior_term.sum() - test_term)


# --- classifiers ---------------------------------------------------------------------

def dd_classify(design, results):
    """Definite defectives: infected iff never in a negative test and the only
    uncleared member of some positive test."""
    neg = results.outcomes[design.edge_test] == 0
    cleared = np.zeros(design.n, dtype=bool)
    cleared[design.members[neg]] = True
    uncleared_edge = ~cleared[design.members]
    per_test = np.bincount(design.edge_test, weights=uncleared_edge, minlength=design.m)
    pos_tests = results.outcomes == 1
    explaining = pos_tests[design.edge_test] & (per_test[design.edge_test] == 1) & uncleared_edge
    out = np.zeros(design.n, dtype=np.int8)
    out[design.members[explaining]] = 1
    return out


def threshold_classify(marginals, threshold=0.5):
    """Infected iff the marginal strictly exceeds ``threshold``."""
    return (np.asarray(marginals) > threshold).astype(np.int8)


def init_agreement(design, results, priors, scen, truth, rng, config=None):
    """L-infinity distance between the marginals reached from prior and truth initialisation."""
    base = config or BPConfig()
    _, a, _ = run_bp(design, results, priors, scen, base, rng=rng)
    cfg = BPConfig(base.max_updates, base.tol, base.schedule, "truth")
    _, b, _ = run_bp(design, results, priors, scen, cfg, rng=rng, truth=truth)
    return float(np.abs(a - b).max()) if a.size else 0.0
