import numpy as np
import pytest

from gtbp.model import Scenario, derive_rng
from gtbp.popdyn import PopDynConfig, popdyn_run


def test_config_validation():
    with pytest.raises(ValueError):
        PopDynConfig(0.05, Scenario(0.05), 2.0, 14, population=100)
    with pytest.raises(ValueError):
        PopDynConfig(0.05, Scenario(0.05), 2.0, 14, iterations=0)
    with pytest.raises(ValueError):
        PopDynConfig(0.0, Scenario(0.0), 2.0, 14)
    cfg = PopDynConfig.for_ratio(0.05, Scenario(0.05), 0.25)
    assert cfg.gamma == 14 and cfg.delta == pytest.approx(3.5)


def test_vanishing_prior_polarises_healthy():
    scen = Scenario(1e-9)
    cfg = PopDynConfig(1e-9, scen, 2.0, 3, iterations=3)
    res = popdyn_run(cfg, derive_rng(0))
    assert res.polarised_healthy == 1.0
    assert np.all(res.marginals == 0.0)


def test_no_tests_gives_prior_point_mass():
    cfg = PopDynConfig(0.05, Scenario(0.05), 0.0, 14, iterations=2)
    res = popdyn_run(cfg, derive_rng(0))
    np.testing.assert_allclose(res.marginals, 0.05, rtol=1e-12)
    assert res.polarised_healthy == res.polarised_infected == 0.0
    k = np.searchsorted(res.bin_edges, 0.05, side="right") - 1
    assert res.mass[k] == 1.0


@pytest.mark.parametrize("pq", [(1.0, 1.0), (0.95, 0.95)])
def test_histogram_is_distribution(pq, tmp_path):
    cfg = PopDynConfig.for_ratio(0.05, Scenario(0.05, *pq), 0.2, iterations=10)
    res = popdyn_run(cfg, derive_rng(1))
    assert res.mass.sum() == pytest.approx(1.0, abs=1e-9)
    path = tmp_path / "hist.csv"
    res.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_low,bin_high,mass"
    assert len(lines) == cfg.bins + 1
    assert sum(float(l.split(",")[2]) for l in lines[1:]) == pytest.approx(1.0, abs=1e-9)


def test_polarised_healthy_grows_with_tests():
    fracs = []
    for ratio in (0.05, 0.1, 0.15, 0.2, 0.25, 0.3):
        cfg = PopDynConfig.for_ratio(0.05, Scenario(0.05), ratio, iterations=15)
        fracs.append(popdyn_run(cfg, derive_rng(2, "grid")).polarised_healthy)
    assert all(b >= a - 0.02 for a, b in zip(fracs, fracs[1:]))


def test_seeded_run_repeats():
    cfg = PopDynConfig.for_ratio(0.05, Scenario(0.05, 0.99, 0.98), 0.2, iterations=5)
    a = popdyn_run(cfg, derive_rng(3))
    b = popdyn_run(cfg, derive_rng(3))
    assert np.array_equal(a.marginals, b.marginals)
