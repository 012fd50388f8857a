import numpy as np
import pytest

from gravity_oos.dgp import DgpParams, generate_panel
from gravity_oos.gravity import (
    COLUMNS,
    FIXED_EFFECTS,
    GravityModel,
    GravitySpec,
    Kind,
    build_design,
    fe_keys,
    fit_gravity,
    predict_gravity,
)
from gravity_oos.ppml import FeDimension, UnidentifiedGroupError

from oracles import dummy_design, newton_poisson


@pytest.fixture(scope="module")
def panel():
    return generate_panel(DgpParams(n_exporters=8, n_importers=8, n_years=6, seed=4))[0]


class Const:
    def __init__(self, value):
        self.value = value

    def predict(self, panel):
        return np.full(len(panel), self.value)


def test_design_columns(panel):
    for kind in Kind:
        aug = Const(1.0) if kind is Kind.THREE_WAY_ML else None
        y, X, names, fe = build_design(GravitySpec(kind, aug), panel)
        assert names == COLUMNS[kind]
        assert [d.name for d in fe] == FIXED_EFFECTS[kind]
        assert X.shape == (len(panel), len(names))
        assert y is panel.trade


def test_absorbed_columns(panel):
    three = fit_gravity(GravitySpec(Kind.THREE_WAY), panel).fit_
    assert "ln_dist" not in three.kept_columns
    two = fit_gravity(GravitySpec(Kind.TWO_WAY), panel).fit_
    assert not {"ln_gdp_o", "ln_gdp_d"} & set(two.kept_columns)
    one = fit_gravity(GravitySpec(Kind.ONE_WAY), panel).fit_
    assert "ln_gdp_o" in one.kept_columns


def test_ml_constant_augmentation_dropped(panel):
    m = fit_gravity(GravitySpec(Kind.THREE_WAY_ML, Const(1.0)), panel)
    assert "ln_aug" in m.fit_.dropped_columns
    ref = fit_gravity(GravitySpec(Kind.THREE_WAY), panel)
    np.testing.assert_allclose(m.fitted_values, ref.fitted_values, rtol=1e-10)


def test_ml_requires_positive_augmentation(panel):
    with pytest.raises(ValueError):
        GravitySpec(Kind.THREE_WAY_ML)
    with pytest.raises(ValueError, match="non-positive"):
        build_design(GravitySpec(Kind.THREE_WAY_ML, Const(0.0)), panel)


def test_predict_training_subset(panel):
    for kind in (Kind.TRADITIONAL, Kind.TWO_WAY, Kind.ONE_WAY, Kind.THREE_WAY):
        m = fit_gravity(GravitySpec(kind), panel)
        rows = np.arange(0, len(panel), 7)
        pred = predict_gravity(m, panel.subset(rows).without_outcomes())
        np.testing.assert_allclose(pred, m.fitted_values[rows], rtol=1e-8)
        assert np.all(pred > 0) and np.all(np.isfinite(pred))
        assert abs(m.fitted_values.sum() - panel.trade.sum()) <= 1e-8 * panel.trade.sum()


def test_deterministic(panel):
    a = fit_gravity(GravitySpec(Kind.THREE_WAY), panel).fit_.beta
    b = fit_gravity(GravitySpec(Kind.THREE_WAY), panel).fit_.beta
    assert np.array_equal(a, b)


def test_trad_intercept_only_prediction(panel):
    m = fit_gravity(GravitySpec(Kind.TRADITIONAL), panel)
    ybar = panel.trade.mean()
    m.fit_.beta = np.zeros_like(m.fit_.beta)
    m.fit_.beta[m.fit_.kept_columns.index("const")] = np.log(ybar)
    np.testing.assert_allclose(m.predict(panel), ybar, rtol=1e-12)


def test_threeway_normalization_invariance(panel):
    m = fit_gravity(GravitySpec(Kind.THREE_WAY), panel)
    base = m.predict(panel)
    fv = m.fit_.fe_values
    c = -1.7
    fv["exporter_year"] = {k: v + c for k, v in fv["exporter_year"].items()}
    fv["importer_year"] = {k: v - c for k, v in fv["importer_year"].items()}
    np.testing.assert_allclose(m.predict(panel), base, rtol=1e-12)


def test_threeway_matches_oracle():
    panel = generate_panel(DgpParams(n_exporters=5, n_importers=5, n_years=3, intercept=-2.0, seed=9))[0]
    m = fit_gravity(GravitySpec(Kind.THREE_WAY), panel)
    y, X, _, fe = build_design(GravitySpec(Kind.THREE_WAY), panel)
    keep = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) > 0]
    D, _ = dummy_design(X[:, keep], list(fe_keys(panel, FIXED_EFFECTS[Kind.THREE_WAY]).values()))
    b = newton_poisson(y, D)
    np.testing.assert_allclose(m.predict(panel), np.exp(D @ b), rtol=1e-6)


def test_unseen_group_names_observation(panel):
    rows = np.flatnonzero(panel.year < panel.year.max())
    m = fit_gravity(GravitySpec(Kind.TWO_WAY), panel.subset(rows))
    test = panel.subset(np.flatnonzero(panel.year == panel.year.max()))
    with pytest.raises(UnidentifiedGroupError) as info:
        m.predict(test)
    assert info.value.dimension == "exporter_year"
    assert "->" in str(info.value.__cause__)


def test_separated_pair_zero_mode(panel):
    trade = panel.trade.copy()
    pair = panel.pairs[0]
    rows = panel.pair_index[pair]
    trade[rows] = 0
    from gravity_oos.panel import TradePanel

    zeroed = TradePanel(panel.exporter, panel.importer, panel.year, trade, panel.covariates)
    with pytest.warns(UserWarning):
        strict = GravityModel(GravitySpec(Kind.THREE_WAY)).fit(zeroed)
    with pytest.raises(UnidentifiedGroupError):
        strict.predict(zeroed.subset(rows))
    with pytest.warns(UserWarning):
        lenient = GravityModel(GravitySpec(Kind.THREE_WAY), on_separated="zero").fit(zeroed)
    assert np.all(lenient.predict(zeroed.subset(rows)) == 0)
    other = np.setdiff1d(np.arange(len(zeroed)), rows)[:5]
    assert np.all(lenient.predict(zeroed.subset(other)) > 0)


def test_nesting_sum_preservation():
    panel = generate_panel(DgpParams(fe_sd=(0, 0, 0), seed=2))[0]
    for kind in (Kind.TRADITIONAL, Kind.THREE_WAY):
        mu = fit_gravity(GravitySpec(kind), panel).fitted_values
        assert abs(mu.sum() - panel.trade.sum()) <= 1e-8 * panel.trade.sum()


def test_named():
    assert GravitySpec.named("twoway").kind is Kind.TWO_WAY
    with pytest.raises(ValueError):
        GravitySpec.named("fourway")
    with pytest.raises(RuntimeError):
        GravityModel(GravitySpec(Kind.TRADITIONAL)).predict(None)
    assert isinstance(FeDimension("x", ["a"]).n_groups, int)
