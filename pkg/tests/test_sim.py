import numpy as np
import pytest
from scipy import stats

from onlineph import DataBlock, TransformKind
from onlineph.errors import InvalidInputError
from onlineph.sim import (
    CENSOR_MAX,
    SimConfig,
    generate_block,
    permutation_experiment,
    power_experiment,
    qq_experiment,
    simulate_stream,
    size_experiment,
)


def test_exponential_median():
    cfg = SimConfig(beta=(0.0, 0.0, 0.0), epsilon=1.0, n_k=100_000, lambda0=0.018)
    block = generate_block(cfg, 1)
    # censoring at 60 sits above the median, so the sample median is unaffected
    assert np.median(block.time) == pytest.approx(np.log(2) / 0.018, abs=0.5)


def test_epsilon_one_censors_at_sixty():
    block = generate_block(SimConfig(epsilon=1.0, n_k=5000), 1)
    assert np.all(block.time[block.status == 0] == CENSOR_MAX)


@pytest.mark.parametrize("epsilon,target", [(0.9, 0.40), (0.1, 0.60)])
def test_censoring_fraction(epsilon, target):
    cfg = SimConfig(epsilon=epsilon, n_k=20_000)
    censored = np.mean([1 - generate_block(cfg, k).status.mean() for k in range(1, 6)])
    assert abs(censored - target) <= 0.03


def test_reproducible_and_distinct_streams():
    cfg = SimConfig(n_k=200)
    a, b = generate_block(cfg, 3, 1), generate_block(cfg, 3, 1)
    np.testing.assert_array_equal(a.time, b.time)
    np.testing.assert_array_equal(a.covariates, b.covariates)
    assert not np.array_equal(generate_block(cfg, 3, 2).time, a.time)
    assert not np.array_equal(generate_block(cfg, 4, 1).time, a.time)


def test_zero_alternatives_nest_the_null():
    null = SimConfig(n_k=300)
    for alt in (null.with_(scenario="frailty", sigma=0.0), null.with_(scenario="beta_shift", delta=0.0)):
        for k in (1, 30, 50):
            x, y = generate_block(null, k), generate_block(alt, k)
            np.testing.assert_array_equal(x.time, y.time)
            np.testing.assert_array_equal(x.status, y.status)


def test_alternatives_only_after_change():
    null = SimConfig(n_k=300)
    shift = null.with_(scenario="beta_shift", delta=1.0)
    np.testing.assert_array_equal(generate_block(null, 25).time, generate_block(shift, 25).time)
    assert not np.array_equal(generate_block(null, 26).time, generate_block(shift, 26).time)


def test_config_validation():
    assert SimConfig().change_block == 26
    with pytest.raises(InvalidInputError):
        SimConfig(epsilon=1.5)
    with pytest.raises(InvalidInputError):
        SimConfig(K=10, change_block=11)
    with pytest.raises(InvalidInputError):
        SimConfig(lambda0=0.0)


def test_stream_traces_are_reproducible():
    cfg = SimConfig(K=6, n_k=300, replicates=1)
    a = simulate_stream(cfg, 0, (TransformKind.IDENTITY, TransformKind.KAPLAN_MEIER))
    b = simulate_stream(cfg, 0, (TransformKind.IDENTITY, TransformKind.KAPLAN_MEIER))
    np.testing.assert_array_equal(a.stat_cum, b.stat_cum)
    np.testing.assert_array_equal(a.stat_win, b.stat_win)
    assert not a.errors


def test_size_experiment_edge_cases(tmp_path):
    cfg = SimConfig(K=4, n_k=200, replicates=1, alpha=1.0)
    curve = size_experiment(cfg)[TransformKind.KAPLAN_MEIER]
    np.testing.assert_array_equal(curve.rate_cum, 1.0)
    cfg = cfg.with_(alpha=0.05)
    curve = size_experiment(cfg)[TransformKind.KAPLAN_MEIER]
    assert set(np.unique(curve.rate_cum)) <= {0.0, 1.0}
    rate, se, n = curve.rates("cumulative")
    np.testing.assert_array_equal(n, 1)
    tidy, summary = curve.write_csv(tmp_path, "size")
    assert tidy.exists() and summary.exists()
    assert len(tidy.read_text().splitlines()) == 1 + 2 * 4


def test_experiment_scenario_guards():
    with pytest.raises(InvalidInputError):
        size_experiment(SimConfig(scenario="frailty", sigma=1.0, replicates=1))
    with pytest.raises(InvalidInputError):
        power_experiment(SimConfig(replicates=1))
    with pytest.raises(InvalidInputError):
        qq_experiment(SimConfig(K=5, replicates=1), [6])


def test_qq_single_block_matches_pooled():
    qq = qq_experiment(SimConfig(K=1, n_k=300, replicates=3), [1])
    np.testing.assert_allclose(qq.online, qq.pooled, atol=1e-10)


def test_power_first_k_reported():
    cfg = SimConfig(K=8, n_k=500, replicates=4, scenario="beta_shift", delta=1.5, change_block=4)
    curve = power_experiment(cfg)[TransformKind.KAPLAN_MEIER]
    first = curve.first_k_above("cumulative")
    assert first is None or 4 <= first <= 8


def test_permutation_guards_and_range():
    cfg = SimConfig(K=3, n_k=150)
    blocks = [generate_block(cfg, k) for k in range(1, 4)]
    with pytest.raises(InvalidInputError):
        permutation_experiment(blocks, 0)
    with pytest.raises(InvalidInputError):
        permutation_experiment(blocks[:1], 5)
    res = permutation_experiment(blocks, 9, np.random.default_rng(0))
    assert 0.1 <= res.p_value <= 1.0 and res.permuted.shape == (9,)


def test_permutation_reshuffles_degenerate_blocks():
    # one event in total: most shuffles give event-free blocks
    time = np.arange(1.0, 9.0)
    status = np.zeros(8, int)
    status[0] = 1
    x = np.random.default_rng(0).normal(size=(8, 1))
    pooled = DataBlock(time, status, x)
    blocks = [DataBlock(time[:4], status[:4], x[:4]), DataBlock(time[4:], np.r_[1, 0, 0, 0], x[4:])]
    res = permutation_experiment(blocks, 5, np.random.default_rng(1), w=2)
    assert res.retries > 0
    assert pooled.d == 1


def _shift_stream_pvalues(replicates=10, n_perm=39):
    cfg = SimConfig(K=10, n_k=300, scenario="beta_shift", delta=1.0, change_block=6)
    out = []
    for r in range(replicates):
        blocks = [generate_block(cfg, k, r) for k in range(1, 11)]
        out.append(permutation_experiment(blocks, n_perm, np.random.default_rng(r)))
    return out


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=(
    "shuffling subjects turns the between-block shift into a within-block mixture "
    "of two hazards, which inflates the permuted statistics; the upper-tail p-value "
    "is near 1 rather than small (see notes ledger)"))
def test_permutation_upper_tail_flags_coefficient_shift():
    pvals = np.array([r.p_value for r in _shift_stream_pvalues()])
    print(f"share of p <= 0.05 under a coefficient shift: {np.mean(pvals <= 0.05):.2f}")
    assert np.mean(pvals <= 0.05) >= 0.8


@pytest.mark.slow
def test_permutation_separates_ordered_stream_from_shuffles():
    # the ordering is detected, in the lower tail of the shuffled distribution
    results = _shift_stream_pvalues(replicates=6, n_perm=19)
    lower = [np.mean(r.permuted <= r.observed) for r in results]
    assert np.mean(np.array(lower) <= 0.05) >= 0.5


@pytest.mark.slow
def test_permutation_p_values_uniform_under_null():
    cfg = SimConfig(K=4, n_k=150)
    pvals = []
    for r in range(60):
        blocks = [generate_block(cfg, k, r) for k in range(1, 5)]
        pvals.append(permutation_experiment(blocks, 19, np.random.default_rng(r), w=2).p_value)
    # discrete p-values on a grid of 1/20; KS against U(0,1) at the 0.01 level
    assert stats.kstest(pvals, "uniform").pvalue > 0.01
