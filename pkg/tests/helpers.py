"""Small panel builders shared by the tests."""

import itertools

import numpy as np

from gravity_oos.panel import BINARY_FIELDS, COVARIATES, REAL_FIELDS, TradePanel


def make_panel(triples, trade=None, seed=0, **cov):
    """Panel over (exporter, importer, year) triples with random covariates.

    Keyword arguments override single covariate columns.
    """
    rng = np.random.default_rng(seed)
    n = len(triples)
    ex = [t[0] for t in triples]
    im = [t[1] for t in triples]
    yr = [t[2] for t in triples]
    if trade is None:
        trade = rng.poisson(20, n).astype(float)
    cols = {}
    for name in REAL_FIELDS:
        cols[name] = rng.normal(size=n)
    for name in BINARY_FIELDS:
        cols[name] = rng.integers(0, 2, n)
    cols.update(cov)
    return TradePanel(ex, im, yr, trade, {c: cols[c] for c in COVARIATES})


def grid_triples(n_countries=4, years=range(2000, 2006)):
    names = [f"C{i}" for i in range(n_countries)]
    return [(a, b, t) for a, b in itertools.permutations(names, 2) for t in years]
