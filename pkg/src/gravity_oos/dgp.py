"""Synthetic trade panels drawn from a known 3-way gravity process."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .panel import COVARIATES, TradePanel

DEFAULT_BETA = {
    "ln_gdp_o": 0.8,
    "ln_gdp_d": 0.8,
    "ln_dist": -0.8,
    "eu": 0.2,
    "cu": 0.15,
    "rta": 0.3,
    "contig": 0.4,
    "comlang": 0.3,
    "colony": 0.2,
    "sanction": -0.3,
}


@dataclass(frozen=True)
class DgpParams:
    """Parameters of the synthetic gravity process.

    ``fe_sd`` holds the standard deviations of exporter-year, importer-year and pair
    effects. ``selection_link`` in [-1, 1] is the correlation between a pair's effect
    and its propensity to sign a trade agreement, so that ``rta`` is endogenous.
    ``treated_share`` of rows get the synthetic treatment flag, scaled by ``exp(tau)``.
    """

    n_exporters: int = 20
    n_importers: int = 20
    n_years: int = 10
    beta: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_BETA))
    intercept: float = -4.0
    tau: float = 0.0
    treated_share: float = 0.0
    fe_sd: tuple[float, float, float] = (0.3, 0.3, 1.0)
    error_kind: str = "poisson"
    sigma: float = 0.5
    selection_link: float = 0.0
    first_year: int = 2000
    seed: int = 0

    def __post_init__(self):
        if min(self.fe_sd) < 0 or self.sigma < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.n_exporters * self.n_importers * self.n_years < 50:
            raise ValueError("panel too small: need n_exporters * n_importers * n_years >= 50")
        if self.error_kind not in ("poisson", "lognormal"):
            raise ValueError(f"unknown error_kind {self.error_kind!r}")
        if not -1 <= self.selection_link <= 1:
            raise ValueError("selection_link must lie in [-1, 1]")
        unknown = set(self.beta) - set(COVARIATES)
        if unknown:
            raise ValueError(f"unknown coefficients {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "DgpParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown DGP parameters {sorted(unknown)}")
        kw = dict(data)
        if "beta" in kw:
            kw["beta"] = {**DEFAULT_BETA, **kw["beta"]}
        if "fe_sd" in kw:
            kw["fe_sd"] = tuple(kw["fe_sd"])
        return cls(**kw)


@dataclass(frozen=True)
class Truth:
    beta: dict[str, float]
    intercept: float
    tau: float
    alpha: dict[str, float]  # "exporter|year"
    gamma: dict[str, float]  # "importer|year"
    eta: dict[str, float]  # "exporter|importer"
    treated: np.ndarray
    log_mu: np.ndarray

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_mu)


def generate_panel(params: DgpParams, rng: np.random.Generator | None = None) -> tuple[TradePanel, Truth]:
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    ne, ni, T = params.n_exporters, params.n_importers, params.n_years
    nc = max(ne, ni)
    countries = [f"C{c:03d}" for c in range(nc)]
    years = params.first_year + np.arange(T)

    # country-level covariates
    ln_gdp = 10.0 + rng.normal(0.0, 1.0, nc)[:, None] + np.cumsum(rng.normal(0.02, 0.05, (nc, T)), axis=1)
    pos = rng.uniform(0.0, 10.0, (nc, 2))
    eu_member = rng.random(nc) < 0.3
    eu_join = rng.integers(0, T, nc)

    # pair-level covariates and effects
    pairs = [(i, j) for i in range(ne) for j in range(ni) if i != j]
    P = len(pairs)
    pi = np.array([p[0] for p in pairs])
    pj = np.array([p[1] for p in pairs])
    sd_a, sd_g, sd_e = params.fe_sd
    alpha = rng.normal(0.0, sd_a, (ne, T))
    gamma = rng.normal(0.0, sd_g, (ni, T))
    eta_z = rng.normal(0.0, 1.0, P)
    eta = sd_e * eta_z
    dist = np.hypot(*(pos[pi] - pos[pj]).T) + 0.3
    ln_dist = np.log(1000.0 * dist)
    contig = (dist < 1.5).astype(np.int8)
    comlang = (rng.random(P) < 0.15).astype(np.int8)
    colony = (rng.random(P) < 0.05).astype(np.int8)
    rho = params.selection_link
    propensity = rho * eta_z + np.sqrt(1.0 - rho**2) * rng.normal(0.0, 1.0, P)
    rta_pair = propensity > np.quantile(propensity, 0.7)
    rta_start = rng.integers(1, max(T, 2), P)
    cu_pair = rng.random(P) < 0.05
    cu_start = rng.integers(0, T, P)

    t = np.tile(np.arange(T), P)
    p = np.repeat(np.arange(P), T)
    i, j = pi[p], pj[p]
    cov = {
        "ln_gdp_o": ln_gdp[i, t],
        "ln_gdp_d": ln_gdp[j, t],
        "ln_dist": ln_dist[p],
        "eu": (eu_member[i] & eu_member[j] & (t >= eu_join[i]) & (t >= eu_join[j])).astype(np.int8),
        "cu": (cu_pair[p] & (t >= cu_start[p])).astype(np.int8),
        "rta": (rta_pair[p] & (t >= rta_start[p])).astype(np.int8),
        "contig": contig[p],
        "comlang": comlang[p],
        "colony": colony[p],
        "sanction": (rng.random(P * T) < 0.02).astype(np.int8),
    }
    treated = rng.random(P * T) < params.treated_share
    log_mu = params.intercept + alpha[i, t] + gamma[j, t] + eta[p] + params.tau * treated
    for name, b in params.beta.items():
        log_mu = log_mu + b * cov[name]
    if np.max(log_mu) > 700:
        raise ValueError("parameters overflow exp(); lower the intercept or coefficients")
    mu = np.exp(log_mu)
    if params.error_kind == "poisson":
        y = rng.poisson(mu).astype(np.float64)
    else:
        s = params.sigma
        y = mu * np.exp(rng.normal(-0.5 * s * s, s, len(mu)))

    names = np.array(countries, dtype=object)
    panel = TradePanel(names[i], names[j], years[t], y, cov)
    truth = Truth(
        beta=dict(params.beta),
        intercept=params.intercept,
        tau=params.tau,
        alpha={f"{countries[a]}|{years[b]}": float(alpha[a, b]) for a in range(ne) for b in range(T)},
        gamma={f"{countries[a]}|{years[b]}": float(gamma[a, b]) for a in range(ni) for b in range(T)},
        eta={f"{countries[a]}|{countries[b]}": float(eta[k]) for k, (a, b) in enumerate(pairs)},
        treated=treated,
        log_mu=log_mu,
    )
    return panel, truth


def true_counterfactual(truth: Truth, rows: np.ndarray | None = None) -> np.ndarray:
    """Untreated conditional means exp(log mu - tau * D) for ``rows``."""
    rows = slice(None) if rows is None else np.asarray(rows)
    return np.exp(truth.log_mu[rows] - truth.tau * truth.treated[rows])
