import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravity_oos.metrics import (
    MetricError,
    RepetitionResult,
    aggregate_ie,
    imputation_estimator,
    oos_r2,
    pooled_mae,
    pooled_rrmse,
    summarize,
)

from oracles import naive_corr2


def test_ie_examples():
    y = np.array([3.0, 5.0, 1.0])
    assert imputation_estimator(y, y) == 1.0
    assert imputation_estimator([2, 4], [1, 2]) == 2.0
    assert imputation_estimator([1, 1], [2, 0]) == 1.0
    with pytest.raises(MetricError):
        imputation_estimator([1, 1], [1, -1])
    with pytest.raises(MetricError):
        imputation_estimator([1, 1], [-1, -1])


def test_aggregate_examples():
    assert aggregate_ie([1, 1, 1]) == (1.0, 0.0, 0.0)
    mean, se, mse = aggregate_ie([1.1, 0.9])
    assert mean == pytest.approx(1.0) and se == pytest.approx(0.1) and mse == pytest.approx(0.01)
    with pytest.raises(MetricError):
        aggregate_ie([1.0])
    assert aggregate_ie([1.1, 0.9], ddof=1)[1] == pytest.approx(0.1 * math.sqrt(2))


def test_pooled_examples():
    y, p = np.array([2.0, 4.0]), np.array([1.0, 2.0])
    assert pooled_mae([(y, y)]) == (0.0, 0.0)
    assert pooled_mae([(y, p)]) == (1.5, 0.5)
    assert pooled_rrmse([(y, y)]) == 0.0
    assert pooled_rrmse([(y, p)]) == pytest.approx(math.sqrt(2.5) / 3)
    assert pooled_rrmse([(y, p)]) == pytest.approx(0.5270, abs=1e-4)
    with pytest.raises(MetricError):
        pooled_mae([(np.zeros(2), p)])


def test_r2_examples():
    rng = np.random.default_rng(0)
    y = rng.normal(size=30)
    assert oos_r2([(y, 2 * y + 3)]) == pytest.approx(1.0)
    a = np.array([1.0, -1.0, 1.0, -1.0])
    b = np.array([1.0, 1.0, -1.0, -1.0])
    assert oos_r2([(a, b)]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        oos_r2([(a, b)], mode="mean")
    with pytest.warns(UserWarning, match="zero variance"):
        assert oos_r2([(a, b), (a, np.ones(4))]) == pytest.approx(0.0, abs=1e-15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(MetricError):
            oos_r2([(a, np.ones(4))])


# -- brute force ---------------------------------------------------------------


def brute(reps):
    """Loop-based reference values: ies, mae, rmae, rrmse, r2 per-rep, r2 pooled."""
    ies = []
    abs_sum = sq_sum = obs_sum = 0.0
    n = 0
    for o, p in reps:
        so = sp = 0.0
        for a, b in zip(o, p):
            so += a
            sp += b
            abs_sum += abs(b - a)
            sq_sum += (b - a) ** 2
            n += 1
        obs_sum += so
        ies.append(so / sp)
    K = len(ies)
    mean = sum(ies) / K
    se = math.sqrt(sum((v - mean) ** 2 for v in ies) / K)
    mse = sum((v - 1) ** 2 for v in ies) / K
    ybar = obs_sum / n
    per = sum(naive_corr2(list(o), list(p)) for o, p in reps) / K
    pooled = naive_corr2([a for o, _ in reps for a in o], [b for _, p in reps for b in p])
    return ies, (mean, se, mse), abs_sum / n, abs_sum / n / ybar, math.sqrt(sq_sum / n) / ybar, per, pooled


reps_strategy = st.integers(0, 2**31).map(
    lambda s: [
        (rng.gamma(2.0, 5.0, n), rng.gamma(2.0, 5.0, n))
        for rng in [np.random.default_rng(s)]
        for n in rng.integers(3, 12, rng.integers(2, 6))
    ]
)


@settings(max_examples=50, deadline=None)
@given(reps_strategy)
def test_metrics_match_brute_force(reps):
    ies, agg, mae, rmae, rrmse, r2_rep, r2_pool = brute(reps)
    for (o, p), ie in zip(reps, ies):
        assert imputation_estimator(o, p) == pytest.approx(ie, rel=1e-12)
    np.testing.assert_allclose(aggregate_ie(ies), agg, rtol=1e-12, atol=1e-15)
    assert pooled_mae(reps) == pytest.approx((mae, rmae), rel=1e-12)
    assert pooled_rrmse(reps) == pytest.approx(rrmse, rel=1e-12)
    assert oos_r2(reps) == pytest.approx(r2_rep, rel=1e-12)
    assert oos_r2(reps, "pooled") == pytest.approx(r2_pool, rel=1e-12)
    assert pooled_rrmse(reps) >= pooled_mae(reps)[1] - 1e-15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=50))
def test_mse_identity(ies):
    mean, se, mse = aggregate_ie(ies)
    assert abs(mse - (se**2 + (mean - 1) ** 2)) <= 1e-12 * max(1.0, mse)


@settings(max_examples=30, deadline=None)
@given(reps_strategy, st.randoms(use_true_random=False))
def test_pooled_invariant_to_order_and_partition(reps, rnd):
    shuffled = list(reps)
    rnd.shuffle(shuffled)
    assert pooled_mae(shuffled) == pytest.approx(pooled_mae(reps), rel=1e-12)
    o = np.concatenate([r[0] for r in reps])
    p = np.concatenate([r[1] for r in reps])
    cut = rnd.randint(1, len(o) - 1)
    split = [(o[:cut], p[:cut]), (o[cut:], p[cut:])]
    assert pooled_mae(split) == pytest.approx(pooled_mae(reps), rel=1e-12)
    assert pooled_rrmse(split) == pytest.approx(pooled_rrmse(reps), rel=1e-12)
    assert oos_r2(split, "pooled") == pytest.approx(oos_r2(reps, "pooled"), rel=1e-12)


def test_identical_reps_mean_ie():
    o, p = np.array([1.0, 2.0, 7.0]), np.array([2.0, 2.5, 3.0])
    results = [RepetitionResult(k, o, {"m": p}) for k in range(1, 6)]
    rep = summarize(results, ["m"])
    assert rep["m"].mean_ie == imputation_estimator(o, p)


def test_summarize_failures_and_exclusions():
    o = np.array([1.0, 2.0, 3.0])
    results = [
        RepetitionResult(1, o, {"a": o * 1.1, "b": None}, {"b": "boom"}),
        RepetitionResult(2, o, {"a": o * 0.9, "b": o}),
        RepetitionResult(3, o, {"a": np.array([1.0, -1.0, -1.0]), "b": o}),
    ]
    rep = summarize(results, ["a", "b"])
    assert rep.failures == {"a": 0, "b": 1}
    assert rep["a"].ie_excluded == 1 and rep["a"].reps_used == 3
    assert rep["a"].mean_ie == pytest.approx((1 / 1.1 + 1 / 0.9) / 2)
    assert rep["b"].mean_ie == 1.0 and rep["b"].failures == 1
    assert rep.K == 3 and rep.n_k_min == rep.n_k_max == 3
    # order of results does not matter
    again = summarize(results[::-1], ["a", "b"])
    assert again["a"] == rep["a"]


def test_result_validation():
    with pytest.raises(MetricError):
        RepetitionResult(1, np.array([-1.0]), {})
    with pytest.raises(MetricError):
        RepetitionResult(1, np.array([1.0, 2.0]), {"m": np.ones(3)})
    with pytest.raises(MetricError):
        summarize([], ["m"])
