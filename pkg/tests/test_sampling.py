import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravity_oos.sampling import (
    SCENARIOS,
    SelectionParams,
    SplitError,
    SplitPlan,
    _enforce_coverage,
    check_split,
    make_split,
    repetition_rng,
    select_pairs,
    select_years,
    selection_prob,
    standardize_pair_fe,
)

from helpers import grid_triples, make_panel


def test_standardize_examples():
    assert standardize_pair_fe({"p1": 2, "p2": 4}) == {"p1": -1.0, "p2": 1.0}
    out = standardize_pair_fe(dict(enumerate([1, 2, 3, 4])))
    np.testing.assert_allclose(list(out.values()), [-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865])
    again = standardize_pair_fe(out)
    np.testing.assert_allclose(list(again.values()), list(out.values()), atol=1e-12)
    with pytest.raises(ValueError):
        standardize_pair_fe({"a": 1.0, "b": 1.0})
    with pytest.raises(ValueError):
        standardize_pair_fe({"a": 1.0})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=40).filter(lambda v: np.ptp(v) > 1e-3))
def test_standardize_moments(values):
    out = np.array(list(standardize_pair_fe(dict(enumerate(values))).values()))
    assert abs(out.mean()) < 1e-12
    assert abs(np.sqrt(np.mean(out**2)) - 1) < 1e-12


def test_selection_prob_examples():
    assert selection_prob(2.5, 5.0, 2.0) == pytest.approx(0.5)
    assert selection_prob(0.3, 4.6, 0.0) == pytest.approx(0.009952, abs=5e-7)
    assert selection_prob(0.0, 5.0, 1.0) == pytest.approx(0.006693, abs=5e-7)
    v = selection_prob(np.array([-1.0, 0.0, 3.0]), 4.6, 0.0)
    assert np.ptp(v) == 0


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-8, 8), b=st.floats(0.01, 3), x=st.floats(-5, 5), dx=st.floats(0.01, 2))
def test_selection_prob_monotone(a, b, x, dx):
    p0, p1 = selection_prob(x, a, b), selection_prob(x + dx, a, b)
    assert 0 < p0 < 1 and p1 > p0


def test_select_pairs_extremes():
    rng = np.random.default_rng(0)
    assert select_pairs({i: 0.0 for i in range(20)}, rng) == set()
    assert select_pairs({i: 1.0 for i in range(20)}, rng) == set(range(20))


@pytest.mark.parametrize("delta, expected", [(0, 12), (2, 10), (-2, 14), (1, 11), (-1, 13)])
def test_select_years_T30(delta, expected):
    years = np.arange(1994, 2024)
    held = select_years(years, delta=delta)
    assert len(held) == expected
    assert held[-1] == 2023 and np.all(np.diff(held) == 1)


def test_select_years_clamp_and_errors():
    years = np.arange(5)
    for delta in range(-2, 3):
        held = select_years(years, delta=delta)
        assert 1 <= len(held) <= 4
    with pytest.raises(ValueError):
        select_years(np.arange(4), delta=0)
    with pytest.raises(ValueError):
        select_years(np.array([1, 3, 2, 4, 5]), delta=0)


def test_percentile_rule_matches_position_on_balanced_years():
    years = np.arange(2000, 2030)
    for delta in range(-2, 3):
        a = select_years(years, delta=delta)
        b = select_years(years, delta=delta, rule="percentile")
        assert abs(len(a) - len(b)) <= 1


def test_year_counts_equal_frequency():
    rng = np.random.default_rng(1)
    counts = [len(select_years(np.arange(30), rng)) for _ in range(20_000)]
    vals, freq = np.unique(counts, return_counts=True)
    assert list(vals) == [10, 11, 12, 13, 14]
    assert np.abs(freq / len(counts) - 0.2).max() < 0.02


@pytest.fixture(scope="module")
def panel():
    return make_panel(grid_triples(6, range(2000, 2010)), seed=2)


def _eta(panel, seed=0):
    rng = np.random.default_rng(seed)
    return standardize_pair_fe({f"{e}|{i}": rng.normal() for e, i in panel.pairs})


def test_make_split_invariants(panel):
    eta = _eta(panel)
    for k in range(1, 30):
        plan = make_split(panel, SelectionParams(1.0, 1.0), eta, repetition_rng(0, k))
        check_split(panel, plan)
        assert plan.n_k == len(plan.test_rows) > 0
        is_test = np.zeros(len(panel), bool)
        is_test[plan.test_rows] = True
        for c in np.unique(panel.pair_codes[plan.test_rows]):
            rows = panel.pair_index[panel.pairs[c]]
            # held-out years are a suffix of the pair's years
            flags = is_test[rows]
            assert np.all(np.diff(flags.astype(int)) >= 0)


def test_make_split_deterministic(panel):
    eta = _eta(panel)
    a = make_split(panel, SelectionParams(1.0, 1.0), eta, repetition_rng(5, 3))
    b = make_split(panel, SelectionParams(1.0, 1.0), eta, repetition_rng(5, 3))
    c = make_split(panel, SelectionParams(1.0, 1.0), eta, repetition_rng(5, 4))
    assert np.array_equal(a.test_rows, b.test_rows)
    assert not np.array_equal(a.test_rows, c.test_rows)


def test_make_split_errors(panel):
    eta = _eta(panel)
    with pytest.raises(SplitError, match="empty"):
        make_split(panel, SelectionParams(60.0, 0.0), eta, np.random.default_rng(0))
    partial = dict(list(eta.items())[::6])
    with pytest.raises(SplitError, match="no standardized"):
        make_split(panel, SelectionParams(1.0, 1.0), partial, np.random.default_rng(0))
    plan = make_split(panel, SelectionParams(-10.0, 0.0), partial, np.random.default_rng(0), allow_missing=True)
    chosen = {f"{panel.exporter[r]}|{panel.importer[r]}" for r in plan.test_rows}
    assert chosen <= set(partial)


def test_check_split_catches_violations(panel):
    n = len(panel)
    rows = panel.pair_index[panel.pairs[0]]
    bad = SplitPlan(test_rows=rows, train_rows=np.setdiff1d(np.arange(n), rows))
    with pytest.raises(SplitError, match="no training rows"):
        check_split(panel, bad)
    first = rows[:1]
    bad = SplitPlan(test_rows=first, train_rows=np.setdiff1d(np.arange(n), first))
    with pytest.raises(SplitError, match="after a test year"):
        check_split(panel, bad)
    with pytest.raises(SplitError, match="partition"):
        check_split(panel, SplitPlan(test_rows=first, train_rows=np.arange(n)))


def test_coverage_moves_rows_back():
    # exporter A sells only to B: holding out A->B in its last years leaves the
    # A exporter-year groups of those years untrained, so the rows move back
    triples = [(e, i, t) for e, i in [("A", "B"), ("B", "A"), ("B", "C"), ("C", "B")] for t in range(2000, 2006)]
    panel = make_panel(triples)
    rows = panel.pair_index[("A", "B")][-2:]
    kept, moved = _enforce_coverage(panel, np.sort(rows))
    assert moved == 2 and len(kept) == 0
    # C imports only from B, so holding out B->C loses C's importer-year group
    rows = panel.pair_index[("B", "C")][-1:]
    kept, moved = _enforce_coverage(panel, rows)
    assert moved == 1
    # in a full grid every country-year group has other members
    full = make_panel(grid_triples(4, range(2000, 2006)))
    rows = full.pair_index[full.pairs[0]][-3:]
    kept, moved = _enforce_coverage(full, np.sort(rows))
    assert moved == 0 and np.array_equal(kept, np.sort(rows))


def test_selection_frequency_tracks_probability():
    triples = [(f"E{p}", "M", 2000) for p in range(100)]
    eta = standardize_pair_fe({f"E{p}|M": v for p, v in enumerate(np.linspace(-2, 2, 100))})
    probs = {k: selection_prob(v, 0.5, 1.0) for k, v in eta.items()}
    rng = np.random.default_rng(3)
    hits = dict.fromkeys(probs, 0)
    R = 10_000
    for _ in range(R):
        for k in select_pairs(probs, rng):
            hits[k] += 1
    dev = max(abs(hits[k] / R - probs[k]) for k in probs)
    assert dev < 0.02
    assert len(triples) == 100


def test_endogenous_top_decile_rate(panel):
    big = make_panel(grid_triples(12, range(2000, 2008)), seed=1)
    eta = _eta(big, 4)
    keys = list(eta)
    v = np.array([eta[k] for k in keys])
    top = set(np.array(keys)[v >= np.quantile(v, 0.9)])
    bot = set(np.array(keys)[v <= np.quantile(v, 0.1)])
    probs = {k: selection_prob(eta[k], 5.0, 1.0) for k in keys}
    rng = np.random.default_rng(0)
    nt = nb = 0
    for _ in range(1000):
        s = select_pairs(probs, rng)
        nt += len(s & top)
        nb += len(s & bot)
    assert nt >= 5 * max(nb, 1)


def test_exogenous_independent_of_eta():
    big = make_panel(grid_triples(12, range(2000, 2008)), seed=1)
    eta = _eta(big, 4)
    a, b = SCENARIOS["exogenous"]
    probs = {k: selection_prob(v, a, b) for k, v in eta.items()}
    rng = np.random.default_rng(0)
    freq = dict.fromkeys(probs, 0)
    for _ in range(1000):
        for k in select_pairs(probs, rng):
            freq[k] += 1
    keys = list(eta)
    corr = np.corrcoef([freq[k] for k in keys], [eta[k] for k in keys])[0, 1]
    assert abs(corr) < 0.05 + 3 / math.sqrt(len(keys))


def test_scenarios_and_params():
    assert SelectionParams.scenario("endogenous") == SelectionParams(5.0, 1.0)
    assert SelectionParams.scenario("small-endogenous").a == 7.5
    assert SelectionParams.scenario("exogenous").b == 0.0
    with pytest.raises(ValueError):
        SelectionParams.scenario("random")
    with pytest.raises(ValueError):
        SelectionParams(float("nan"), 1.0)
    with pytest.raises(ValueError):
        SelectionParams(1.0, 1.0, year_rule="median")
