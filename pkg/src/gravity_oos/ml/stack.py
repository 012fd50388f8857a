"""Stacked generalization: convex combination of cross-fitted learner predictions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .features import FeatureSet
from .mlp import MlpParams, fit_mlp_poisson
from .trees import BoostingParams, ForestParams, fit_gradient_boosting, fit_random_forest


class StackError(RuntimeError):
    pass


class Fitted(Protocol):
    def predict(self, F) -> np.ndarray: ...


@dataclass(frozen=True)
class Learner:
    """A named recipe ``fit(F, y, rng) -> fitted model``."""

    name: str
    fit: Callable[[FeatureSet, np.ndarray, np.random.Generator], Fitted]


def default_learners(
    rf: ForestParams | None = None, gb: BoostingParams | None = None, nn: MlpParams | None = None
) -> list[Learner]:
    return [
        Learner("rf", lambda F, y, rng: fit_random_forest(F, y, rf, rng)),
        Learner("gb", lambda F, y, rng: fit_gradient_boosting(F, y, gb, rng)),
        Learner("nn", lambda F, y, rng: fit_mlp_poisson(F, y, nn, rng)),
    ]


@dataclass(frozen=True)
class StackWeights:
    w: np.ndarray
    names: list[str]

    def __post_init__(self):
        if np.any(self.w < 0) or abs(self.w.sum() - 1) > 1e-8:
            raise StackError(f"weights {self.w} are not on the simplex")


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _kkt_residual(Q: np.ndarray, c: np.ndarray, w: np.ndarray, support_tol: float = 1e-12) -> float:
    g = 2.0 * (Q @ w - c)
    S = w > support_tol
    nu = -float(np.mean(g[S]))
    stat = np.abs(g[S] + nu).max()
    dual = np.maximum(0.0, -(g[~S] + nu)).max() if (~S).any() else 0.0
    return float(max(stat, dual))


def simplex_least_squares(P: np.ndarray, y: np.ndarray, tol: float = 1e-10, max_iter: int = 200_000) -> np.ndarray:
    """argmin ||y - P w||^2 over the probability simplex.

    Accelerated projected gradient, then an active-set polish that solves the
    equality-constrained problem on the detected support. The result satisfies the
    KKT conditions to ``tol`` on the scale-normalized problem.
    """
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, M = P.shape
    if M == 1:
        return np.ones(1)
    scale = np.sqrt(np.mean(y * y)) or 1.0
    A = P / scale
    b = y / scale
    Q = A.T @ A / n
    c = A.T @ b / n
    L = 2.0 * np.linalg.eigvalsh(Q).max()
    if L <= 0:
        return np.full(M, 1.0 / M)

    def obj(w):
        return float(w @ Q @ w - 2.0 * c @ w)

    w = np.full(M, 1.0 / M)
    z = w.copy()
    t = 1.0
    for _ in range(max_iter):
        w_new = project_simplex(z - 2.0 * (Q @ z - c) / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = w_new + (t - 1) / t_new * (w_new - w)
        if obj(w_new) > obj(w):  # restart momentum
            z, t_new = w_new.copy(), 1.0
        step = np.abs(w_new - w).max()
        w, t = w_new, t_new
        if step < 1e-14 or _kkt_residual(Q, c, w) < tol:
            break

    polished = _polish(Q, c, w)
    if polished is not None and obj(polished) <= obj(w) + 1e-15:
        w = polished
    if _kkt_residual(Q, c, w) > max(tol, 1e-9):
        raise StackError(f"simplex least squares did not converge (KKT residual {_kkt_residual(Q, c, w):.2e})")
    return w


def _polish(Q, c, w):
    S = np.flatnonzero(w > 1e-9)
    k = len(S)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2.0 * Q[np.ix_(S, S)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.concatenate([2.0 * c[S], [1.0]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    if np.any(sol[:k] < 0):
        return None
    out = np.zeros_like(w)
    out[S] = sol[:k]
    out /= out.sum()
    return out


def pair_folds(groups: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per row; all rows of a group share a fold."""
    uniq, inv = np.unique(groups, return_inverse=True)
    if len(uniq) < folds:
        raise ValueError(f"{len(uniq)} groups cannot fill {folds} folds")
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[rng.permutation(len(uniq))] = np.arange(len(uniq))
    return (rank % folds)[inv]


class StackedRegressor:
    def __init__(self, weights: StackWeights, learners: list[Fitted], cv_predictions: np.ndarray, y: np.ndarray):
        self.weights = weights
        self.learners = learners
        self.cv_predictions = cv_predictions
        self._y = y

    def predict(self, F) -> np.ndarray:
        out = np.zeros(len(F) if isinstance(F, FeatureSet) else np.asarray(F).shape[0])
        for wm, model in zip(self.weights.w, self.learners):
            if wm > 0:
                out += wm * model.predict(F)
        return out

    def objective(self, w: np.ndarray) -> float:
        """Mean squared cross-fitted error of combination ``w``."""
        r = self._y - self.cv_predictions @ w
        return float(np.mean(r * r))


def _rows(F, idx):
    return F.take(idx) if isinstance(F, FeatureSet) else np.asarray(F)[idx]


def cross_fit(
    learners: Sequence[Learner], F: FeatureSet | np.ndarray, y: np.ndarray, fold: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    folds = int(fold.max()) + 1
    P = np.zeros((len(y), len(learners)))
    seeds = rng.integers(0, 2**63, size=(folds, len(learners)))
    for f in range(folds):
        tr = np.flatnonzero(fold != f)
        te = np.flatnonzero(fold == f)
        for m, learner in enumerate(learners):
            model = learner.fit(_rows(F, tr), y[tr], np.random.default_rng(seeds[f, m]))
            P[te, m] = model.predict(_rows(F, te))
    return P


def fit_stack(
    learners: Sequence[Learner],
    F: FeatureSet,
    y,
    folds: int = 5,
    rng: np.random.Generator | int = 0,
    groups: np.ndarray | None = None,
    final_models: Sequence[Fitted] | None = None,
) -> StackedRegressor:
    """Cross-fit each learner, solve for simplex weights, refit learners on all rows.

    ``groups`` keeps rows of one group in the same fold (pairs, in the harness).
    Already-fitted full-sample models can be passed as ``final_models``.
    """
    if not learners:
        raise ValueError("need at least one learner")
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    y = np.asarray(y, dtype=np.float64)
    groups = np.arange(len(y)) if groups is None else np.asarray(groups)
    fold = pair_folds(groups, folds, rng)
    P = cross_fit(learners, F, y, fold, rng)
    w = simplex_least_squares(P, y)
    weights = StackWeights(w, [l.name for l in learners])
    if final_models is None:
        seeds = rng.integers(0, 2**63, size=len(learners))
        final_models = [l.fit(F, y, np.random.default_rng(s)) for l, s in zip(learners, seeds)]
    return StackedRegressor(weights, list(final_models), P, y)
