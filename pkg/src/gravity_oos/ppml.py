"""Poisson pseudo-maximum likelihood with absorbed high-dimensional fixed effects.

The estimator is IRLS. Each weighted least-squares step sweeps the working
response and the regressors against every fixed-effect dimension by weighted
alternating projections (Gauss-Seidel), solves the small reduced normal
equations, and reads the new linear predictor off the projection residual.
Fixed-effect values are recovered after convergence by backfitting.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)


class PpmlError(RuntimeError):
    pass


class ConvergenceError(PpmlError):
    pass


class UnidentifiedGroupError(KeyError):
    """Prediction needs a fixed-effect group that has no estimated value."""

    def __init__(self, dimension: str, key, row: int | None = None):
        self.dimension = dimension
        self.key = key
        self.row = row
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"unidentified group {key!r} in fixed-effect dimension '{dimension}'{where}")

    def __str__(self):
        return self.args[0]


class FeDimension:
    """One fixed-effect dimension: a group label per observation.

    ``kind`` is descriptive (exporter_year, importer_year, pair or custom).
    """

    def __init__(self, name: str, keys: Sequence, kind: str = "custom"):
        self.name = name
        self.kind = kind
        labels, codes = np.unique(np.asarray(keys, dtype=object).astype(str), return_inverse=True)
        self.labels = labels.astype(object)
        self.codes = codes.astype(np.int64)

    @property
    def n_groups(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.codes)

    def __repr__(self):
        return f"FeDimension({self.name!r}, kind={self.kind!r}, groups={self.n_groups})"

    def take(self, rows: np.ndarray) -> "FeDimension":
        return FeDimension(self.name, self.labels[self.codes[rows]], self.kind)


@dataclass(frozen=True)
class PpmlOptions:
    tol_deviance: float = 1e-9
    max_iter: int = 200
    tol_project: float = 1e-10
    max_project_iter: int = 100_000
    tol_rank: float = 1e-9
    tol_recover: float = 1e-8
    raise_on_nonconvergence: bool = True


@dataclass
class PpmlFit:
    beta: np.ndarray
    column_names: list[str]
    kept_columns: list[str]
    dropped_columns: list[str]
    fe_names: list[str]
    fe_values: dict[str, dict[str, float]]
    fitted_mu: np.ndarray
    sample_mask: np.ndarray
    xb: np.ndarray
    iterations: int
    converged: bool
    final_deviance: float
    n_separated: int = 0
    n_components: int = 1
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    def coef(self) -> dict[str, float]:
        return dict(zip(self.kept_columns, map(float, self.beta)))

    def full_beta(self) -> np.ndarray:
        """Coefficients over all input columns, zero for dropped ones."""
        out = np.zeros(len(self.column_names))
        idx = [self.column_names.index(c) for c in self.kept_columns]
        out[idx] = self.beta
        return out

    def trace_text(self) -> str:
        lines = ["iter  deviance  rel_change"]
        lines += [f"{it:4d}  {dev:.12g}  {chg:.3e}" for it, dev, chg in self.trace]
        return "\n".join(lines)


# -- projections -----------------------------------------------------------


class _Groups:
    __slots__ = ("codes", "n", "ind")

    def __init__(self, codes: np.ndarray):
        self.codes = codes
        self.n = int(codes.max()) + 1 if len(codes) else 0
        nobs = len(codes)
        self.ind = sp.csr_matrix((np.ones(nobs), (codes, np.arange(nobs))), shape=(self.n, nobs))


def demean(
    cols: np.ndarray,
    groups: Sequence[np.ndarray | _Groups],
    weights: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, int]:
    """Residualize each column of ``cols`` on the fixed effects in ``groups``.

    Gauss-Seidel sweeps subtract weighted group means one dimension at a time
    until the largest weighted group mean in a sweep is below ``tol``.
    Returns the residuals and the number of sweeps.
    """
    R = np.array(cols, dtype=np.float64, copy=True)
    squeeze = R.ndim == 1
    if squeeze:
        R = R[:, None]
    if not groups or R.shape[1] == 0:
        return (R[:, 0] if squeeze else R), 0
    gs = [g if isinstance(g, _Groups) else _Groups(np.asarray(g)) for g in groups]
    w = np.ones(R.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    wsums = [g.ind @ w for g in gs]
    wR = w[:, None]
    single = len(gs) == 1
    for sweep in range(1, max_iter + 1):
        worst = 0.0
        for g, ws in zip(gs, wsums):
            means = (g.ind @ (wR * R)) / ws[:, None]
            R -= means[g.codes]
            worst = max(worst, float(np.max(np.abs(means))))
        if single or worst < tol:
            return (R[:, 0] if squeeze else R), sweep
    raise ConvergenceError(f"alternating projections did not converge in {max_iter} sweeps (last max mean {worst:.3e})")


def drop_collinear(
    X: np.ndarray,
    fe: Sequence[FeDimension] | Sequence[np.ndarray],
    tol_rank: float = 1e-9,
    names: Sequence[str] | None = None,
) -> tuple[list, list]:
    """Split columns of ``X`` into kept and dropped after absorbing ``fe``.

    A column is dropped when its within-transformed version is (numerically) in the
    span of the previously kept within-transformed columns. The test is relative to
    the raw column norm, so rescaling a column never changes the outcome.
    Returns column names (or indices when ``names`` is None).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = list(names) if names is not None else list(range(X.shape[1]))
    if X.shape[1] == 0:
        return [], []
    codes = [d.codes if isinstance(d, FeDimension) else np.asarray(d) for d in fe]
    Xt, _ = demean(X, codes)
    kept: list[int] = []
    dropped: list[int] = []
    basis = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        raw = float(np.dot(X[:, j], X[:, j]))
        r = Xt[:, j]
        if basis.shape[1]:
            r = r - basis @ (basis.T @ r)
            r = r - basis @ (basis.T @ r)  # second pass for orthogonality
        rr = float(np.dot(r, r))
        if raw == 0.0 or rr <= tol_rank * raw:
            dropped.append(j)
        else:
            kept.append(j)
            basis = np.column_stack([basis, r / np.sqrt(rr)])
    return [labels[j] for j in kept], [labels[j] for j in dropped]


# -- estimation --------------------------------------------------------------


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _separated_mask(y: np.ndarray, fe: Sequence[FeDimension]) -> np.ndarray:
    """Rows whose group in some dimension has only zero outcomes."""
    bad = np.zeros(len(y), dtype=bool)
    for d in fe:
        tot = np.bincount(d.codes, weights=y, minlength=d.n_groups)
        bad |= tot[d.codes] <= 0
    return bad


def fit_ppml(
    y: np.ndarray,
    X: np.ndarray | None,
    fe: Sequence[FeDimension] = (),
    opts: PpmlOptions | None = None,
    names: Sequence[str] | None = None,
) -> PpmlFit:
    """Poisson PML of ``y`` on ``X`` with fixed effects ``fe`` absorbed."""
    opts = opts or PpmlOptions()
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if X.shape[0] != n:
        raise ValueError(f"y has {n} rows but X has {X.shape[0]}")
    if len(names) != X.shape[1]:
        raise ValueError("names must match the columns of X")
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        raise ValueError("y must be finite and non-negative")
    if not np.any(y > 0):
        raise PpmlError("all outcomes are zero")
    for d in fe:
        if len(d) != n:
            raise ValueError(f"fixed effect {d.name} has {len(d)} rows, expected {n}")

    sample = ~_separated_mask(y, fe)
    n_sep = int(n - sample.sum())
    if n_sep:
        warnings.warn(f"{n_sep} observations in groups with only zero outcomes excluded", stacklevel=2)
    ys, Xs = y[sample], X[sample]
    fes = [d.take(np.flatnonzero(sample)) for d in fe] if n_sep else list(fe)
    groups = [_Groups(d.codes) for d in fes]

    kept, dropped = drop_collinear(Xs, [d.codes for d in fes], opts.tol_rank, names)
    kidx = [names.index(c) for c in kept]
    Xk = Xs[:, kidx]
    k = Xk.shape[1]

    mu = (ys + ys.mean()) / 2.0
    eta = np.log(mu)
    dev = poisson_deviance(ys, mu)
    beta = np.zeros(k)
    trace: list[tuple[int, float, float]] = []
    converged = False
    change = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        z = eta + (ys - mu) / mu
        M, _ = demean(np.column_stack([z, Xk]), groups, mu, opts.tol_project, opts.max_project_iter)
        zt, Xt = M[:, 0], M[:, 1:]
        if k:
            WX = Xt * mu[:, None]
            beta_new = np.linalg.solve(WX.T @ Xt, WX.T @ zt)
            resid = zt - Xt @ beta_new
        else:
            beta_new = beta
            resid = zt
        eta_new = z - resid
        mu_new = np.exp(eta_new)
        dev_new = poisson_deviance(ys, mu_new)
        step = 1.0
        eta_try = eta_new
        # the starting means are not a model point, so halving only applies from step 2
        while it > 1 and (not np.isfinite(dev_new) or dev_new > dev * (1 + 1e-10)) and step > 1e-8:
            step /= 2
            eta_try = eta + step * (eta_new - eta)
            mu_new = np.exp(eta_try)
            dev_new = poisson_deviance(ys, mu_new)
        if step < 1.0:
            eta_new = eta_try
            beta_new = beta + step * (beta_new - beta)
        change = abs(dev_new - dev) / max(min(dev, dev_new), 0.1)
        trace.append((it, dev_new, change))
        eta, mu, dev, beta = eta_new, mu_new, dev_new, beta_new
        if it > 1 and change < opts.tol_deviance:
            converged = True
            break
    if not converged:
        msg = f"PPML did not converge in {opts.max_iter} iterations (last relative deviance change {change:.3e})"
        if opts.raise_on_nonconvergence:
            raise ConvergenceError(msg)
        warnings.warn(msg, stacklevel=2)

    fit = PpmlFit(
        beta=beta,
        column_names=names,
        kept_columns=kept,
        dropped_columns=dropped,
        fe_names=[d.name for d in fe],
        fe_values={},
        fitted_mu=mu,
        sample_mask=sample,
        xb=Xk @ beta if k else np.zeros(len(ys)),
        iterations=it,
        converged=converged,
        final_deviance=dev,
        n_separated=n_sep,
        trace=trace,
    )
    if fes:
        fit.fe_values, fit.n_components = _recover(fit, fes, opts)
    return fit


def _components(fe: Sequence[FeDimension]) -> tuple[int, list[np.ndarray]]:
    """Connected components of the group graph; returns count and per-dimension labels."""
    offsets = np.cumsum([0] + [d.n_groups for d in fe])
    n_nodes = int(offsets[-1])
    n = len(fe[0])
    rows, cols = [], []
    for d, off in zip(fe, offsets[:-1]):
        rows.append(np.arange(n))
        cols.append(d.codes + off)
    # observation nodes come after group nodes
    r = np.concatenate(rows) + n_nodes
    c = np.concatenate(cols)
    A = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n_nodes + n, n_nodes + n))
    ncomp, lab = connected_components(A, directed=False)
    group_lab = lab[:n_nodes]
    uniq, comp = np.unique(group_lab, return_inverse=True)
    return len(uniq), [comp[offsets[i] : offsets[i + 1]] for i in range(len(fe))]


def _recover(fit: PpmlFit, fe: Sequence[FeDimension], opts: PpmlOptions) -> tuple[dict, int]:
    target = np.log(fit.fitted_mu) - fit.xb
    groups = [_Groups(d.codes) for d in fe]
    vals = [np.zeros(g.n) for g in groups]
    resid = target.copy()
    counts = [np.bincount(g.codes, minlength=g.n).astype(float) for g in groups]
    for _ in range(opts.max_project_iter):
        worst = 0.0
        for g, v, c in zip(groups, vals, counts):
            step = np.bincount(g.codes, weights=resid, minlength=g.n) / c
            v += step
            resid -= step[g.codes]
            worst = max(worst, float(np.max(np.abs(step))))
        if len(groups) == 1 or worst < 1e-14 or float(np.max(np.abs(resid))) < opts.tol_recover * 1e-3:
            break
    ncomp, comp = _components(fe)
    # shift dimensions after the first to mean zero within each component
    for d in range(1, len(fe)):
        shift = np.bincount(comp[d], weights=vals[d], minlength=ncomp) / np.maximum(
            np.bincount(comp[d], minlength=ncomp), 1
        )
        vals[d] -= shift[comp[d]]
        vals[0] += shift[comp[0]]
    recon = sum(v[g.codes] for v, g in zip(vals, groups))
    err = float(np.max(np.abs(recon - target))) if len(target) else 0.0
    if err > opts.tol_recover:
        raise PpmlError(
            f"fixed-effect recovery residual {err:.3e} exceeds {opts.tol_recover:.1e}; "
            f"design has {ncomp} connected components"
        )
    if ncomp > 1:
        log.info("fixed effects span %d connected components", ncomp)
    out = {d.name: dict(zip(d.labels.tolist(), v.tolist())) for d, v in zip(fe, vals)}
    return out, ncomp


def recover_fixed_effects(fit: PpmlFit, fe: Sequence[FeDimension], opts: PpmlOptions | None = None) -> dict:
    """Fixed-effect values reproducing ``fit.fitted_mu``; ``fe`` covers the full input rows."""
    if not fit.converged:
        raise PpmlError("cannot recover fixed effects from a fit that did not converge")
    idx = np.flatnonzero(fit.sample_mask)
    fes = [d.take(idx) for d in fe] if len(idx) != len(fit.sample_mask) else list(fe)
    values, _ = _recover(fit, fes, opts or PpmlOptions())
    return values


def predict_mu(
    fit: PpmlFit,
    X: np.ndarray | None,
    fe_keys: Mapping[str, Sequence] | None = None,
) -> np.ndarray:
    """exp(x'beta + sum of fixed effects) for each row.

    ``X`` holds all input columns of the fit (dropped ones are ignored);
    ``fe_keys`` maps each fixed-effect dimension name to the group label per row.
    """
    fe_keys = fe_keys or {}
    if X is None:
        n = len(next(iter(fe_keys.values()))) if fe_keys else 1
        X = np.zeros((n, len(fit.column_names)))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != len(fit.column_names):
        raise ValueError(f"expected {len(fit.column_names)} columns, got {X.shape[1]}")
    eta = X @ fit.full_beta()
    for name in fit.fe_names:
        if name not in fe_keys:
            raise ValueError(f"missing keys for fixed-effect dimension '{name}'")
        table = fit.fe_values[name]
        keys = np.asarray(fe_keys[name], dtype=object).astype(str)
        for i, key in enumerate(keys):
            try:
                eta[i] += table[key]
            except KeyError:
                raise UnidentifiedGroupError(name, key, i) from None
    return np.exp(eta)
