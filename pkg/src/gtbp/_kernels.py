"""Compiled message-passing and sampling loops.

Messages are kept as normalised log-probability pairs.  Edges are indexed in
test-major order (see :class:`gtbp.model.PoolDesign`).
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, nogil=True)
def logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True, nogil=True)
def safe_log(x):
    if x <= 0.0:
        return NEG_INF
    return math.log(x)


@njit(cache=True, nogil=True)
def normalize(w0, w1):
    """Normalise a log pair; ``ok`` is False when both entries vanish."""
    mx = max(w0, w1)
    if mx == NEG_INF:
        return 0.0, 0.0, False
    lse = mx + math.log(math.exp(w0 - mx) + math.exp(w1 - mx))
    return w0 - lse, w1 - lse, True


@njit(cache=True, nogil=True)
def log1m_exp(t):
    """log(1 - exp(t)) for t <= 0."""
    if t >= 0.0:
        return NEG_INF
    if t > -0.6931471805599453:
        return math.log(-math.expm1(t))
    return math.log1p(-math.exp(t))


@njit(cache=True, nogil=True)
def test_log_weights(log_pi, outcome, p, q):
    """Unnormalised log weights (state 0, state 1) sent by a test.

    ``log_pi`` is the log product of the other members' healthy messages.
    """
    c = p + q - 1.0
    if outcome == 0:
        w1 = safe_log(1.0 - q)
        if c > 0.0:
            w0 = logaddexp(w1, math.log(c) + log_pi)
        else:
            w0 = safe_log((1.0 - q) + c * math.exp(log_pi))
    else:
        w1 = safe_log(q)
        if c > 0.0 and q > 0.0:
            w0 = w1 + log1m_exp(log_pi + math.log(c / q))
        else:
            w0 = safe_log(q - c * math.exp(log_pi))
    return w0, w1


@njit(cache=True, nogil=True)
def t2s_update(e, test_ptr, edge_test, lx0, outcomes, p, q):
    a = edge_test[e]
    log_pi = 0.0
    for f in range(test_ptr[a], test_ptr[a + 1]):
        if f != e:
            log_pi += lx0[f]
    w0, w1 = test_log_weights(log_pi, outcomes[a], p, q)
    return normalize(w0, w1)


@njit(cache=True, nogil=True)
def s2t_update(e, members, sample_ptr, sample_edges, lp0, lp1, la0, la1):
    x = members[e]
    s0 = lp0[x]
    s1 = lp1[x]
    for i in range(sample_ptr[x], sample_ptr[x + 1]):
        f = sample_edges[i]
        if f != e:
            s0 += la0[f]
            s1 += la1[f]
    return normalize(s0, s1)


@njit(cache=True, nogil=True)
def sequential_window(picks, coins, test_ptr, members, edge_test, sample_ptr, sample_edges,
                      lp0, lp1, outcomes, p, q, lx0, lx1, la0, la1):
    """Apply one random single-message update per entry of ``picks``.

    Returns the largest absolute change in a message's infected probability
    and the number of updates skipped for contradictory evidence.
    """
    max_change = 0.0
    bad = 0
    for t in range(picks.size):
        e = picks[t]
        if coins[t]:
            l0, l1, ok = s2t_update(e, members, sample_ptr, sample_edges, lp0, lp1, la0, la1)
            if not ok:
                bad += 1
                continue
            d = abs(math.exp(l1) - math.exp(lx1[e]))
            lx0[e] = l0
            lx1[e] = l1
        else:
            l0, l1, ok = t2s_update(e, test_ptr, edge_test, lx0, outcomes, p, q)
            if not ok:
                bad += 1
                continue
            d = abs(math.exp(l1) - math.exp(la1[e]))
            la0[e] = l0
            la1[e] = l1
        if d > max_change:
            max_change = d
    return max_change, bad


@njit(cache=True, nogil=True)
def all_t2s(test_ptr, edge_test, lx0, outcomes, p, q, la0, la1):
    """Synchronous test-to-sample sweep; returns (max change, contradictions)."""
    max_change = 0.0
    bad = 0
    m = test_ptr.size - 1
    for a in range(m):
        lo = test_ptr[a]
        hi = test_ptr[a + 1]
        tot = 0.0
        n_inf = 0
        for f in range(lo, hi):
            if lx0[f] == NEG_INF:
                n_inf += 1
            else:
                tot += lx0[f]
        for e in range(lo, hi):
            if lx0[e] == NEG_INF:
                log_pi = tot if n_inf == 1 else NEG_INF
            else:
                log_pi = NEG_INF if n_inf > 0 else tot - lx0[e]
            w0, w1 = test_log_weights(log_pi, outcomes[a], p, q)
            l0, l1, ok = normalize(w0, w1)
            if not ok:
                bad += 1
                continue
            d = abs(math.exp(l1) - math.exp(la1[e]))
            if d > max_change:
                max_change = d
            la0[e] = l0
            la1[e] = l1
    return max_change, bad


@njit(cache=True, nogil=True)
def all_s2t(members, sample_ptr, sample_edges, lp0, lp1, la0, la1, lx0, lx1):
    max_change = 0.0
    bad = 0
    n = sample_ptr.size - 1
    for x in range(n):
        for i in range(sample_ptr[x], sample_ptr[x + 1]):
            e = sample_edges[i]
            l0, l1, ok = s2t_update(e, members, sample_ptr, sample_edges, lp0, lp1, la0, la1)
            if not ok:
                bad += 1
                continue
            d = abs(math.exp(l1) - math.exp(lx1[e]))
            if d > max_change:
                max_change = d
            lx0[e] = l0
            lx1[e] = l1
    return max_change, bad


@njit(cache=True, nogil=True)
def marginals(sample_ptr, sample_edges, lp0, lp1, la0, la1):
    n = sample_ptr.size - 1
    out = np.empty(n)
    bad = 0
    for x in range(n):
        s0 = lp0[x]
        s1 = lp1[x]
        for i in range(sample_ptr[x], sample_ptr[x + 1]):
            f = sample_edges[i]
            s0 += la0[f]
            s1 += la1[f]
        l0, l1, ok = normalize(s0, s1)
        if not ok:
            bad += 1
            out[x] = np.nan
        else:
            out[x] = math.exp(l1)
    return out, bad


@njit(cache=True, nogil=True)
def glauber_chain(sites, uniforms, state, burn, test_ptr, members, sample_ptr, sample_edges,
                  edge_test, outcomes, lp0, lp1, log_psi, counts, hist):
    """Single-site heat-bath updates on the posterior.

    ``log_psi[o, d]`` is the log factor of a test with outcome ``o`` whose pool
    is clean (d=0) or dirty (d=1).  ``counts[x]`` receives the number of steps
    at or after ``burn`` that ended with ``x`` infected; ``hist`` (if
    non-empty) counts the same steps per full configuration, binary-encoded.
    """
    m = test_ptr.size - 1
    n = state.size
    n_inf = np.zeros(m, dtype=np.int64)
    for a in range(m):
        for f in range(test_ptr[a], test_ptr[a + 1]):
            n_inf[a] += state[members[f]]
    since = np.zeros(n, dtype=np.int64)
    code = 0
    if hist.size > 0:
        for x in range(n):
            code += state[x] << x
    steps = sites.size
    for t in range(steps):
        x = sites[t]
        w0 = lp0[x]
        w1 = lp1[x]
        for i in range(sample_ptr[x], sample_ptr[x + 1]):
            a = edge_test[sample_edges[i]]
            o = outcomes[a]
            w1 += log_psi[o, 1]
            w0 += log_psi[o, 1 if n_inf[a] - state[x] > 0 else 0]
        mx = max(w0, w1)
        pr1 = math.exp(w1 - mx) / (math.exp(w0 - mx) + math.exp(w1 - mx))
        new = 1 if uniforms[t] < pr1 else 0
        if new != state[x]:
            old = state[x]
            counts[x] += old * max(0, t - max(since[x], burn))
            since[x] = t
            for i in range(sample_ptr[x], sample_ptr[x + 1]):
                n_inf[edge_test[sample_edges[i]]] += new - old
            if hist.size > 0:
                code += (new - old) << x
            state[x] = new
        if hist.size > 0 and t >= burn:
            hist[code] += 1
    for x in range(n):
        counts[x] += state[x] * max(0, steps - max(since[x], burn))


@njit(cache=True, nogil=True)
def residual(test_ptr, members, edge_test, sample_ptr, sample_edges, lp0, lp1, outcomes, p, q,
             lx0, lx1, la0, la1):
    """Largest change any single update would make, without applying it."""
    worst = 0.0
    for e in range(members.size):
        l0, l1, ok = s2t_update(e, members, sample_ptr, sample_edges, lp0, lp1, la0, la1)
        if ok:
            worst = max(worst, abs(math.exp(l1) - math.exp(lx1[e])))
        l0, l1, ok = t2s_update(e, test_ptr, edge_test, lx0, outcomes, p, q)
        if ok:
            worst = max(worst, abs(math.exp(l1) - math.exp(la1[e])))
    return worst
