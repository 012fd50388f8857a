"""Feature matrices for the ML learners, optionally augmented with estimated 3-way fixed effects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..panel import COVARIATES, TradePanel
from ..ppml import PpmlFit, UnidentifiedGroupError

BASE_COLUMNS = list(COVARIATES)
FE_COLUMNS = ["fe_exporter_year", "fe_importer_year", "fe_pair"]
_FE_DIMS = {"fe_exporter_year": "exporter_year", "fe_importer_year": "importer_year", "fe_pair": "pair"}


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, M: np.ndarray) -> "Scaler":
        mean = M.mean(axis=0)
        sd = np.sqrt(np.mean((M - mean) ** 2, axis=0))
        return cls(mean, sd)

    def transform(self, M: np.ndarray) -> np.ndarray:
        out = np.zeros_like(M, dtype=np.float64)
        ok = self.sd > 0
        # constant training columns carry no information and become zeros
        out[:, ok] = (M[:, ok] - self.mean[ok]) / self.sd[ok]
        return out


@dataclass(frozen=True)
class FeatureSet:
    matrix: np.ndarray
    names: list[str]
    scaler: Scaler | None = None

    @property
    def standardized(self) -> bool:
        return self.scaler is not None

    @property
    def has_fe(self) -> bool:
        return FE_COLUMNS[0] in self.names

    def __len__(self):
        return self.matrix.shape[0]

    def take(self, rows) -> "FeatureSet":
        return FeatureSet(self.matrix[rows], self.names, self.scaler)


def fe_lookup(panel: TradePanel, fe_fit: PpmlFit, fill: str = "error") -> np.ndarray:
    """Estimated exporter-year, importer-year and pair effects for each row.

    With ``fill="min"`` a group without an estimate (all-zero training outcomes)
    gets the smallest estimated value of its dimension instead of raising.
    """
    keys = {
        "exporter_year": panel.exporter_year_keys(),
        "importer_year": panel.importer_year_keys(),
        "pair": panel.pair_keys(),
    }
    cols = []
    for col in FE_COLUMNS:
        dim = _FE_DIMS[col]
        table = fe_fit.fe_values[dim]
        floor = min(table.values())
        vals = np.empty(len(panel))
        for i, key in enumerate(keys[dim]):
            v = table.get(key)
            if v is None:
                if fill != "min":
                    raise UnidentifiedGroupError(dim, key, i)
                v = floor
            vals[i] = v
        cols.append(vals)
    return np.column_stack(cols)


def build_features(
    panel: TradePanel,
    fe_fit: PpmlFit | None = None,
    standardize: bool = False,
    scaler: Scaler | None = None,
    fill: str = "error",
) -> FeatureSet:
    """Covariate matrix, plus fixed-effect columns when ``fe_fit`` is given.

    Pass the training set's ``scaler`` when building test features so both use the
    training statistics.
    """
    M = np.column_stack([panel.column(c).astype(np.float64) for c in BASE_COLUMNS])
    names = list(BASE_COLUMNS)
    if fe_fit is not None:
        M = np.column_stack([M, fe_lookup(panel, fe_fit, fill)])
        names += FE_COLUMNS
    if scaler is not None or standardize:
        scaler = scaler or Scaler.fit(M)
        if len(scaler.mean) != M.shape[1]:
            raise ValueError("scaler was fitted on a different feature set")
        M = scaler.transform(M)
    return FeatureSet(M, names, scaler)


def as_matrix(F) -> np.ndarray:
    return F.matrix if isinstance(F, FeatureSet) else np.asarray(F, dtype=np.float64)
