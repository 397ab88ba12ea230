import math

import numpy as np
import pytest

from hestonmlmc.mlmc import (
    LevelStats,
    MlmcConfig,
    MlmcNotConverged,
    allocate_samples,
    estimate_level,
    level_cost,
    level_samples,
    run_mlmc,
    run_single_mc,
)
from hestonmlmc.model import Payoff


def stats(v, c, level=0):
    return LevelStats(level=level, n_samples=10, mean_diff=0.0, var_diff=v, cost_per_sample=c, h=1.0)


def test_allocation_single_level():
    assert allocate_samples([stats(1.0, 1)], 0.1) == [200]


def test_allocation_two_levels():
    assert allocate_samples([stats(1.0, 1), stats(0.25, 3, 1)], 0.1) == [374, 108]


def test_allocation_scales_with_epsilon():
    levels = [stats(0.7, 1), stats(0.1, 3, 1), stats(0.01, 6, 2)]
    a = allocate_samples(levels, 0.04)
    b = allocate_samples(levels, 0.02)
    for na, nb in zip(a, b):
        assert 4 * (na - 1) <= nb <= 4 * na


def test_allocation_zero_variance_gets_floor():
    assert allocate_samples([stats(1.0, 1), stats(0.0, 3, 1)], 0.1, floor=37)[1] == 37


def test_allocation_rejects_bad_input():
    with pytest.raises(ValueError):
        allocate_samples([stats(math.nan, 1)], 0.1)
    with pytest.raises(ValueError):
        allocate_samples([stats(1.0, 1)], 0.0)


def test_allocation_meets_variance_budget():
    levels = [stats(0.3, 1), stats(0.05, 3, 1), stats(0.012, 6, 2), stats(0.003, 12, 3)]
    eps = 0.01
    n = allocate_samples(levels, eps)
    assert sum(s.var_diff / k for s, k in zip(levels, n)) <= eps**2 / 2


def test_allocation_is_cost_optimal():
    levels = [stats(0.3, 1), stats(0.05, 3, 1), stats(0.012, 6, 2), stats(0.003, 12, 3)]
    v = np.array([s.var_diff for s in levels])
    c = np.array([s.cost_per_sample for s in levels], dtype=float)
    eps = 0.01
    n = np.array(allocate_samples(levels, eps), dtype=float)
    budget = float(np.sum(v / n))
    best = float(np.dot(n, c))
    slack = float(c.sum())
    for i in range(len(n)):
        for j in range(len(n)):
            if i == j:
                continue
            for factor in (0.9, 1.1):
                m = n.copy()
                m[i] *= factor
                rest = budget - np.sum(np.delete(v / m, j))
                if rest <= 0:
                    continue
                m[j] = v[j] / rest
                assert np.dot(m, c) >= best - slack


def test_level_cost():
    assert level_cost(0) == 1
    assert level_cost(3) == 12
    assert level_cost(2, l_min=2) == 4


def test_estimate_level_statistics(paper_params, call):
    vals = level_samples(paper_params, call, 3, 0, 500, seed=4)
    s = estimate_level(paper_params, call, 3, 500, seed=4)
    assert s.n_samples == 500 and s.cost_per_sample == 12 and s.h == 0.125
    assert s.mean_diff == pytest.approx(vals.mean(), rel=1e-14)
    assert s.var_diff == pytest.approx(vals.var(ddof=1), rel=1e-14)
    with pytest.raises(ValueError):
        estimate_level(paper_params, call, 3, 1, seed=4)


def test_level_samples_extend_without_changing_prefix(paper_params, call):
    whole = level_samples(paper_params, call, 4, 0, 300, seed=1)
    parts = np.concatenate([level_samples(paper_params, call, 4, 0, 120, seed=1),
                            level_samples(paper_params, call, 4, 120, 300, seed=1)])
    assert np.array_equal(whole, parts)


def test_base_level_is_single_paths(paper_params):
    phi = Payoff.identity()
    s = estimate_level(paper_params, phi, 2, 4000, seed=3, l_min=2)
    assert s.cost_per_sample == 4
    assert 0.2 < s.mean_diff < 1.0


def test_level_variance_decays_by_about_four(paper_params, call):
    v6 = estimate_level(paper_params, call, 6, 20_000, seed=8).var_diff
    v7 = estimate_level(paper_params, call, 7, 20_000, seed=8).var_diff
    assert 2.5 <= v6 / v7 <= 6.5


def test_config_validation():
    with pytest.raises(ValueError):
        MlmcConfig(0.5)
    with pytest.raises(ValueError):
        MlmcConfig(0.0)
    with pytest.raises(ValueError):
        MlmcConfig(0.01, l_min=5, l_max=3)
    with pytest.raises(ValueError):
        MlmcConfig(0.01, initial_samples=1)


def test_run_mlmc_postconditions(paper_params, call):
    eps = 0.02
    res = run_mlmc(paper_params, call, MlmcConfig(eps, seed=1))
    assert res.converged
    assert res.bias_estimate <= eps / math.sqrt(2)
    assert sum(s.var_diff / s.n_samples for s in res.levels) <= eps**2 / 2
    assert res.bias_estimate**2 + res.statistical_error_estimate**2 <= eps**2
    total = 0.0
    for s in res.levels:
        total += s.mean_diff
    assert res.estimate == total
    assert res.total_cost == sum(s.n_samples * s.cost_per_sample for s in res.levels)
    assert [s.level for s in res.levels] == list(range(res.levels[0].level, res.finest_level + 1))


def test_run_mlmc_deterministic_across_workers(paper_params, call):
    a = run_mlmc(paper_params, call, MlmcConfig(0.01, seed=5, workers=1))
    b = run_mlmc(paper_params, call, MlmcConfig(0.01, seed=5, workers=4))
    assert a.estimate == b.estimate
    assert a.levels == b.levels


def test_run_mlmc_reports_nonconvergence(paper_params, call):
    with pytest.raises(MlmcNotConverged) as info:
        run_mlmc(paper_params, call, MlmcConfig(0.002, l_max=2, seed=0))
    partial = info.value.result
    assert not partial.converged
    assert partial.finest_level == 2
    assert partial.bias_estimate > 0.002 / math.sqrt(2)


def test_run_mlmc_with_raised_base_level(paper_params, call):
    res = run_mlmc(paper_params, call, MlmcConfig(0.02, l_min=2, seed=3))
    assert res.levels[0].level == 2 and res.levels[0].cost_per_sample == 4


def test_single_mc_contract(paper_params, call):
    mean, se, cost = run_single_mc(paper_params, call, 8, 4000, seed=2)
    assert cost == 32_000
    from hestonmlmc.scheme import simulate_paths
    terminal, _ = simulate_paths(paper_params, 8, 2, 0, 4000)
    vals = np.maximum(terminal - 0.05, 0)
    assert mean == pytest.approx(vals.mean(), rel=1e-14)
    assert se == pytest.approx(vals.std(ddof=1) / math.sqrt(4000), rel=1e-12)
    _, se2, _ = run_single_mc(paper_params, call, 8, 8000, seed=2)
    assert 1.3 <= se / se2 <= 1.55
    with pytest.raises(ValueError):
        run_single_mc(paper_params, call, 8, 1, seed=2)


def test_telescoping_sum_matches_single_level(paper_params, call):
    finest = 6
    means = []
    var_of_mean = 0.0
    for level in range(finest + 1):
        s = estimate_level(paper_params, call, level, 40_000, seed=21)
        means.append(s.mean_diff)
        var_of_mean += s.var_diff / s.n_samples
    mc_mean, mc_se, _ = run_single_mc(paper_params, call, 2**finest, 100_000, seed=22)
    assert abs(sum(means) - mc_mean) <= 3 * math.sqrt(var_of_mean + mc_se**2)
