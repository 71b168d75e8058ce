import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtbp.model import (GroundTruth, PoolDesign, Scenario, TestResults, concat_designs,
                        derive_rng, log_posterior_weight, noise_name, pool_or, run_tests,
                        sample_ground_truth, scenario)
from gtbp.oracles import exhaustive_posterior


def test_presets():
    assert scenario(0.1, "noiseless") == Scenario(0.1, 1.0, 1.0)
    assert scenario(0.1, "moderate") == Scenario(0.1, 0.99, 0.98)
    assert scenario(0.1, "high") == Scenario(0.1, 0.95, 0.95)
    assert noise_name(Scenario(0.2, 0.95, 0.95)) == "high"
    assert noise_name(Scenario(0.2, 0.9, 0.95)) is None
    with pytest.raises(ValueError):
        scenario(0.1, "loud")


@pytest.mark.parametrize("bad", [(-0.1, 1, 1), (0.1, 1.2, 1), (0.1, 1, -1)])
def test_scenario_range(bad):
    with pytest.raises(ValueError):
        Scenario(*bad)


def test_derive_rng_is_keyed():
    a = derive_rng(7, 1, "tests").random(5)
    b = derive_rng(7, 1, "tests").random(5)
    c = derive_rng(7, 1, "design").random(5)
    d = derive_rng(7, 2, "tests").random(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_ground_truth_extremes():
    rng = np.random.default_rng(0)
    t0 = sample_ground_truth(5, 0.0, rng)
    t1 = sample_ground_truth(5, 1.0, rng)
    assert t0.k == 0 and not t0.status.any()
    assert t1.k == 5 and t1.status.all()
    with pytest.raises(ValueError):
        sample_ground_truth(5, 1.5, rng)


def test_ground_truth_concentration():
    rng = derive_rng(1, "truth")
    ks = np.array([sample_ground_truth(10_000, 0.05, rng).k for _ in range(200)])
    sd = math.sqrt(10_000 * 0.05 * 0.95)
    # mean of 200 draws: standard error sd / sqrt(200)
    assert abs(ks.mean() - 500) < 3 * sd / math.sqrt(200)


def test_ground_truth_readonly():
    t = GroundTruth([0, 1, 1])
    assert t.k == 2 and t.n == 3
    with pytest.raises(ValueError):
        t.status[0] = 1
    with pytest.raises(ValueError):
        GroundTruth([0, 2])


def test_design_mirrors_and_validation():
    d = PoolDesign.from_pools(4, [[0, 1], [1, 2, 3], [3]])
    assert d.m == 3 and d.n_edges == 6
    assert [t.tolist() for t in d.tests] == [[0, 1], [1, 2, 3], [3]]
    assert [s.tolist() for s in d.samples] == [[0], [0, 1], [1], [1, 2]]
    assert d.gamma_max == 3
    assert d.sample_degrees.tolist() == [1, 2, 1, 2]
    with pytest.raises(ValueError):
        PoolDesign.from_pools(3, [[0, 5]])
    with pytest.raises(ValueError):
        PoolDesign.from_pools(3, [[0], []])
    with pytest.raises(ValueError):
        PoolDesign(3, [0, 2], [1, 1])


def test_design_collapses_repeats_and_embeds():
    d = PoolDesign.from_pools(3, [[2, 0, 2]])
    assert d.tests[0].tolist() == [2, 0]
    big = d.embed(np.array([10, 11, 12]), 20)
    assert big.n == 20 and big.tests[0].tolist() == [12, 10]
    both = concat_designs([d, PoolDesign.from_pools(3, [[1]])], 3)
    assert both.m == 2 and both.tests[1].tolist() == [1]


def test_acyclic_detection():
    assert PoolDesign.from_pools(4, [[0, 1], [1, 2], [2, 3]]).is_acyclic()
    assert not PoolDesign.from_pools(3, [[0, 1], [1, 2], [0, 2]]).is_acyclic()
    assert not PoolDesign.from_pools(2, [[0, 1], [0, 1]]).is_acyclic()


def test_run_tests_perfect_channel():
    d = PoolDesign.from_pools(3, [[0, 1], [1, 2]])
    rng = np.random.default_rng(0)
    assert run_tests(d, GroundTruth([0, 0, 0]), Scenario(0.1), rng).outcomes.tolist() == [0, 0]
    assert run_tests(d, GroundTruth([0, 0, 1]), Scenario(0.1), rng).outcomes.tolist() == [0, 1]
    with pytest.raises(ValueError):
        run_tests(d, GroundTruth([0, 1]), Scenario(0.1), rng)


def test_run_tests_false_positive_rate():
    m = 100_000
    d = PoolDesign(2, np.arange(0, 2 * m + 1, 2), np.tile([0, 1], m))
    out = run_tests(d, GroundTruth([0, 0]), Scenario(0.1, 0.95, 1.0), derive_rng(3)).outcomes
    tol = 3 * math.sqrt(0.05 * 0.95 / m)
    assert abs(out.mean() - 0.05) < tol


def test_run_tests_sensitivity_rate():
    m = 100_000
    d = PoolDesign(2, np.arange(0, 2 * m + 1, 2), np.tile([0, 1], m))
    out = run_tests(d, GroundTruth([1, 0]), Scenario(0.1, 1.0, 0.9), derive_rng(4)).outcomes
    assert abs(out.mean() - 0.9) < 3 * math.sqrt(0.09 / m)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10), st.integers(0, 2**32 - 1))
def test_noiseless_outcomes_are_pool_or(n, m, seed):
    rng = np.random.default_rng(seed)
    pools = [rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False) for _ in range(m)]
    d = PoolDesign.from_pools(n, pools)
    truth = sample_ground_truth(n, 0.3, rng)
    out = run_tests(d, truth, Scenario(0.3), rng).outcomes
    expect = [int(truth.status[p].any()) for p in pools]
    assert out.tolist() == expect
    assert pool_or(d, truth.status).tolist() == expect


def test_log_posterior_weight_examples():
    empty = PoolDesign.empty(1)
    assert log_posterior_weight([1], empty, TestResults([]), Scenario(0.3)) == pytest.approx(math.log(0.3))
    one = PoolDesign.from_pools(1, [[0]])
    assert log_posterior_weight([1], one, TestResults([0]), Scenario(0.3, 1.0, 1.0)) == -math.inf
    two = PoolDesign.from_pools(2, [[0, 1]])
    w = log_posterior_weight([0, 0], two, TestResults([1]), Scenario(0.1, 0.9, 0.9))
    assert w == pytest.approx(math.log(0.081))


def test_log_posterior_weight_shapes():
    two = PoolDesign.from_pools(2, [[0, 1]])
    with pytest.raises(ValueError):
        log_posterior_weight([0], two, TestResults([1]), Scenario(0.1))
    with pytest.raises(ValueError):
        log_posterior_weight([0, 0], two, TestResults([1, 0]), Scenario(0.1))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_posterior_normalises_to_prior_without_tests(n, seed):
    rng = np.random.default_rng(seed)
    pri = rng.uniform(0.05, 0.95, size=n)
    design = PoolDesign.empty(n)
    post = exhaustive_posterior(design, TestResults([]), pri, Scenario(0.5))
    assert post.probs.sum() == pytest.approx(1.0)
    assert post.log_z == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(post.marginals, pri, atol=1e-12)
    # spot-check against the direct product of priors
    codes = rng.integers(0, 2**n, size=5)
    for code in codes:
        sigma = (int(code) >> np.arange(n)) & 1
        direct = log_posterior_weight(sigma, design, TestResults([]), Scenario(0.5), priors=pri)
        assert math.log(post.probs[code]) == pytest.approx(direct)
