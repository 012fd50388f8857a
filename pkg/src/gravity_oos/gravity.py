"""Gravity specifications (traditional, 1-, 2-, 3-way and 3-way-ML) as fit/predict regressors."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .panel import TradePanel
from .ppml import FeDimension, PpmlFit, PpmlOptions, UnidentifiedGroupError, fit_ppml, predict_mu

log = logging.getLogger(__name__)


class Kind(enum.Enum):
    TRADITIONAL = "trad"
    ONE_WAY = "oneway"
    TWO_WAY = "twoway"
    THREE_WAY = "threeway"
    THREE_WAY_ML = "threeway-ml"


COLUMNS = {
    Kind.TRADITIONAL: ["const", "ln_gdp_o", "ln_gdp_d", "ln_dist", "eu", "cu", "rta", "contig", "comlang", "colony", "sanction"],
    Kind.TWO_WAY: ["ln_dist", "eu", "cu", "rta", "contig", "comlang", "colony", "sanction"],
    Kind.ONE_WAY: ["ln_gdp_o", "ln_gdp_d", "eu", "cu", "rta", "sanction"],
    Kind.THREE_WAY: ["eu", "cu", "rta", "sanction"],
    Kind.THREE_WAY_ML: ["eu", "cu", "rta", "sanction", "ln_aug"],
}

FIXED_EFFECTS = {
    Kind.TRADITIONAL: [],
    Kind.TWO_WAY: ["exporter_year", "importer_year"],
    Kind.ONE_WAY: ["pair"],
    Kind.THREE_WAY: ["exporter_year", "importer_year", "pair"],
    Kind.THREE_WAY_ML: ["exporter_year", "importer_year", "pair"],
}


class FittedValuesProvider(Protocol):
    def predict(self, panel: TradePanel) -> np.ndarray: ...


@dataclass(frozen=True)
class GravitySpec:
    kind: Kind
    augmentation: FittedValuesProvider | None = None

    def __post_init__(self):
        if self.kind is Kind.THREE_WAY_ML and self.augmentation is None:
            raise ValueError("3-way-ML needs an augmentation provider")

    @classmethod
    def named(cls, name: str, augmentation: FittedValuesProvider | None = None) -> "GravitySpec":
        return cls(Kind(name), augmentation)


def fe_keys(panel: TradePanel, names: list[str]) -> dict[str, np.ndarray]:
    getters = {
        "exporter_year": panel.exporter_year_keys,
        "importer_year": panel.importer_year_keys,
        "pair": panel.pair_keys,
    }
    return {n: getters[n]() for n in names}


def build_design(spec: GravitySpec, panel: TradePanel) -> tuple[np.ndarray, np.ndarray, list[str], list[FeDimension]]:
    """Outcome, regressor matrix, column names and fixed-effect dimensions for ``spec``.

    Columns are the candidate list; collinear ones are removed later by the estimator.
    """
    if len(panel) == 0:
        raise ValueError("empty panel")
    names = COLUMNS[spec.kind]
    cols = []
    for name in names:
        if name == "const":
            cols.append(np.ones(len(panel)))
        elif name == "ln_aug":
            aug = np.asarray(spec.augmentation.predict(panel), dtype=np.float64)
            if aug.shape != (len(panel),) or not np.all(np.isfinite(aug)) or np.any(aug <= 0):
                raise ValueError("augmentation provider returned non-positive or non-finite values")
            cols.append(np.log(aug))
        else:
            cols.append(panel.column(name).astype(np.float64))
    X = np.column_stack(cols)
    keys = fe_keys(panel, FIXED_EFFECTS[spec.kind])
    fe = [FeDimension(n, k, kind=n) for n, k in keys.items()]
    return panel.trade, X, list(names), fe


class GravityModel:
    """A gravity specification estimated by PPML.

    ``on_separated`` controls prediction for rows whose group was excluded because
    all its training outcomes were zero: ``"error"`` raises, ``"zero"`` predicts 0.
    """

    def __init__(self, spec: GravitySpec, opts: PpmlOptions | None = None, on_separated: str = "error"):
        self.spec = spec
        self.opts = opts or PpmlOptions()
        self.on_separated = on_separated
        self.fit_: PpmlFit | None = None
        self._separated_keys: dict[str, set] = {}

    @property
    def name(self) -> str:
        return self.spec.kind.value

    def fit(self, train: TradePanel) -> "GravityModel":
        y, X, names, fe = build_design(self.spec, train)
        self.fit_ = fit_ppml(y, X, fe, self.opts, names)
        if self.fit_.dropped_columns:
            log.info("%s: dropped collinear columns %s", self.name, self.fit_.dropped_columns)
        self._separated_keys = {}
        if self.fit_.n_separated:
            out = ~self.fit_.sample_mask
            for d in fe:
                present = set(d.labels[d.codes[self.fit_.sample_mask]])
                self._separated_keys[d.name] = set(d.labels[d.codes[out]]) - present
        return self

    def predict(self, panel: TradePanel) -> np.ndarray:
        if self.fit_ is None:
            raise RuntimeError("model is not fitted")
        _, X, _, _ = build_design(self.spec, panel)
        keys = fe_keys(panel, FIXED_EFFECTS[self.spec.kind])
        if self.on_separated == "zero" and self._separated_keys:
            lost = np.zeros(len(panel), dtype=bool)
            for name, bad in self._separated_keys.items():
                lost |= np.isin(keys[name], list(bad))
            out = np.zeros(len(panel))
            keep = ~lost
            if keep.any():
                out[keep] = predict_mu(self.fit_, X[keep], {n: k[keep] for n, k in keys.items()})
            return out
        try:
            return predict_mu(self.fit_, X, keys)
        except UnidentifiedGroupError as err:
            row = panel.row(err.row)
            raise UnidentifiedGroupError(
                err.dimension, err.key, err.row
            ) from ValueError(f"observation {row.exporter}->{row.importer} {row.year}")

    @property
    def fitted_values(self) -> np.ndarray:
        return self.fit_.fitted_mu


def fit_gravity(spec: GravitySpec, train: TradePanel, opts: PpmlOptions | None = None) -> GravityModel:
    return GravityModel(spec, opts).fit(train)


def predict_gravity(model: GravityModel, test: TradePanel) -> np.ndarray:
    return model.predict(test)
