"""Test-set selection: logistic pair selection on standardized pair effects, latest years held out."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .panel import TradePanel

log = logging.getLogger(__name__)

SCENARIOS = {
    "endogenous": (5.0, 1.0),
    "exogenous": (4.6, 0.0),
    "small-endogenous": (7.5, 1.0),
}


class SplitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SelectionParams:
    a: float
    b: float
    seed: int = 0
    year_rule: str = "position"

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("selection parameters must be finite")
        if self.year_rule not in ("position", "percentile"):
            raise ValueError(f"unknown year rule {self.year_rule!r}")

    @classmethod
    def scenario(cls, name: str, seed: int = 0, **kw) -> "SelectionParams":
        try:
            a, b = SCENARIOS[name]
        except KeyError:
            raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
        return cls(a, b, seed, **kw)


@dataclass(frozen=True)
class SplitPlan:
    test_rows: np.ndarray
    train_rows: np.ndarray
    moved_back: int = 0

    @property
    def n_k(self) -> int:
        return len(self.test_rows)


def repetition_rng(seed: int, k: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for repetition ``k`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, k, stream]))


def standardize_pair_fe(eta: Mapping[Hashable, float]) -> dict:
    """Shift and scale to mean 0 and population sd 1."""
    if len(eta) < 2:
        raise ValueError("need at least two pairs to standardize")
    keys = list(eta)
    v = np.array([eta[k] for k in keys], dtype=np.float64)
    m = v.mean()
    sd = np.sqrt(np.mean((v - m) ** 2))
    if not sd > 0:
        raise ValueError("pair effects have zero variance")
    z = (v - m) / sd
    return dict(zip(keys, z.tolist()))


def selection_prob(eta_std, a: float, b: float):
    """1 / (1 + exp(a - b * eta_std)), elementwise."""
    p = expit(b * np.asarray(eta_std, dtype=np.float64) - a)
    return float(p) if np.ndim(p) == 0 else p


def select_pairs(probs: Mapping[Hashable, float], rng: np.random.Generator) -> set:
    """One uniform draw per pair, in mapping order; keep the pair if the draw is below its probability."""
    keys = list(probs)
    p = np.array([probs[k] for k in keys], dtype=np.float64)
    u = rng.random(len(keys))
    return {k for k, hit in zip(keys, u < p) if hit}


def select_years(
    pair_years: Sequence[int],
    rng: np.random.Generator | None = None,
    delta: int | None = None,
    rule: str = "position",
) -> np.ndarray:
    """Latest years of a pair to hold out.

    The cut sits at position ceil(0.6 T) (1-based) shifted by a uniform draw from
    {-2, ..., 2}; everything after it is test. The cut is clamped so at least one
    training and one test year remain. ``rule="percentile"`` places the cut at the
    interpolated 60th-percentile year value instead.
    """
    years = np.asarray(pair_years)
    T = len(years)
    if T < 5:
        raise ValueError(f"need at least 5 years per pair, got {T}")
    if np.any(np.diff(years) <= 0):
        raise ValueError("pair years must be strictly increasing")
    if delta is None:
        delta = int(rng.integers(-2, 3))
    if rule == "position":
        cut = -(-6 * T // 10) + delta
    else:
        threshold = np.percentile(years, 60) + delta
        cut = int(np.sum(years <= threshold))
    cut = min(max(cut, 1), T - 1)
    return years[cut:]


def make_split(
    panel: TradePanel,
    params: SelectionParams,
    eta_std: Mapping[str, float],
    rng: np.random.Generator,
    allow_missing: bool = False,
) -> SplitPlan:
    """Draw one training/test partition. ``eta_std`` is keyed by ``"exporter|importer"``.

    With ``allow_missing`` pairs absent from ``eta_std`` (no estimated effect) are
    never selected; otherwise they are an error.
    """
    keys = [f"{e}|{i}" for e, i in panel.pairs]
    missing = [k for k in keys if k not in eta_std]
    if missing and not allow_missing:
        raise SplitError(f"no standardized pair effect for {len(missing)} pairs, e.g. {missing[0]}")
    p = selection_prob(np.array([eta_std.get(k, 0.0) for k in keys]), params.a, params.b)
    p = np.where([k in eta_std for k in keys], np.atleast_1d(p), 0.0)
    for attempt in range(2):
        chosen = select_pairs(dict(zip(range(len(keys)), p)), rng)
        test = []
        for c in sorted(chosen):
            rows = panel.pair_index[panel.pairs[c]]
            years = panel.year[rows]
            held = select_years(years, rng, rule=params.year_rule)
            test.append(rows[len(years) - len(held) :])
        test_rows = np.sort(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64)
        test_rows, moved = _enforce_coverage(panel, test_rows)
        if len(test_rows):
            break
        log.warning("empty test set drawn%s", ", redrawing" if attempt == 0 else "")
    else:
        raise SplitError("empty test set after one redraw")
    mask = np.zeros(len(panel), dtype=bool)
    mask[test_rows] = True
    plan = SplitPlan(test_rows=test_rows, train_rows=np.flatnonzero(~mask), moved_back=moved)
    check_split(panel, plan)
    return plan


def _enforce_coverage(panel: TradePanel, test_rows: np.ndarray) -> tuple[np.ndarray, int]:
    """Move test rows back to training until every country-year group of a test row is trained on."""
    ex_keys = panel.exporter_year_keys()
    im_keys = panel.importer_year_keys()
    moved = 0
    test = np.zeros(len(panel), dtype=bool)
    test[test_rows] = True
    while True:
        train_ex = set(ex_keys[~test])
        train_im = set(im_keys[~test])
        bad = [r for r in np.flatnonzero(test) if ex_keys[r] not in train_ex or im_keys[r] not in train_im]
        if not bad:
            break
        for r in bad:
            # keep the pair's held-out years a suffix of its years
            rows = panel.pair_index[panel.pairs[panel.pair_codes[r]]]
            back = rows[(panel.year[rows] <= panel.year[r]) & test[rows]]
            moved += len(back)
            test[back] = False
    if moved:
        log.warning("moved %d test rows back to training to keep country-year groups identified", moved)
    return np.flatnonzero(test), moved


def check_split(panel: TradePanel, plan: SplitPlan) -> None:
    n = len(panel)
    test, train = plan.test_rows, plan.train_rows
    if len(np.intersect1d(test, train)) or len(test) + len(train) != n:
        raise SplitError("test and train rows must partition the panel")
    is_test = np.zeros(n, dtype=bool)
    is_test[test] = True
    for c in np.unique(panel.pair_codes[test]):
        rows = panel.pair_index[panel.pairs[c]]
        tr = rows[~is_test[rows]]
        if len(tr) == 0:
            raise SplitError(f"pair {panel.pairs[c]} has no training rows")
        if panel.year[tr].max() >= panel.year[rows[is_test[rows]]].min():
            raise SplitError(f"pair {panel.pairs[c]} has training years after a test year")
    for keys in (panel.exporter_year_keys(), panel.importer_year_keys()):
        if not set(keys[test]) <= set(keys[~is_test]):
            raise SplitError("a country-year group of the test set is absent from training")
