"""Regression trees (squared error), random forests and least-squares gradient boosting."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .features import as_matrix

_LEAF = -1


@numba.njit(cache=True)
def _grow(X, y, w, max_depth, min_leaf, mtry, seed):
    """Grow one tree on rows with positive weight.

    Features are visited in random order until ``mtry`` non-constant ones have been
    scored. Returns (feature, threshold, left, right, value) node arrays.
    """
    np.random.seed(seed)
    n, p = X.shape
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if w[i] > 0:
            idx[m] = i
            m += 1
    idx = idx[:m]
    cap = 2 * m + 1
    feature = np.full(cap, _LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, _LEAF, dtype=np.int64)
    right = np.full(cap, _LEAF, dtype=np.int64)
    value = np.zeros(cap)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    vals = np.empty(m)
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        W = 0.0
        S = 0.0
        SS = 0.0
        for r in range(lo, hi):
            i = idx[r]
            W += w[i]
            S += w[i] * y[i]
            SS += w[i] * y[i] * y[i]
        value[node] = S / W
        cnt = hi - lo
        if (max_depth >= 0 and depth >= max_depth) or cnt < 2 * min_leaf:
            continue
        if SS - S * S / W <= 1e-12 * (abs(SS) + 1e-300):
            continue
        base = S * S / W
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        order_f = np.random.permutation(p)
        visited = 0
        for fi in range(p):
            if visited >= mtry:
                break
            f = order_f[fi]
            for r in range(lo, hi):
                vals[r - lo] = X[idx[r], f]
            sub = vals[:cnt]
            order = np.argsort(sub, kind="mergesort")
            if sub[order[0]] == sub[order[cnt - 1]]:
                continue
            visited += 1
            WL = 0.0
            SL = 0.0
            for q in range(cnt - 1):
                i = idx[lo + order[q]]
                WL += w[i]
                SL += w[i] * y[i]
                if q + 1 < min_leaf or cnt - q - 1 < min_leaf:
                    continue
                v0 = sub[order[q]]
                v1 = sub[order[q + 1]]
                if v0 == v1:
                    continue
                WR = W - WL
                SR = S - SL
                gain = SL * SL / WL + SR * SR / WR - base
                if gain > best_gain * (1 + 1e-12) + 1e-12 * abs(base):
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (v0 + v1)
                    if thr >= v1:
                        thr = v0
                    best_thr = thr
        if best_f < 0:
            continue
        # partition idx[lo:hi] on the chosen split
        a = lo
        b = hi - 1
        while a <= b:
            if X[idx[a], best_f] <= best_thr:
                a += 1
            else:
                tmp = idx[a]
                idx[a] = idx[b]
                idx[b] = tmp
                b -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = a
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes + 1
        st_lo[top] = a
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != _LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def grow(cls, X, y, w=None, max_depth=None, min_leaf=1, mtry=None, seed=0) -> "Tree":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        w = np.ones(len(y)) if w is None else np.ascontiguousarray(w, dtype=np.float64)
        mtry = X.shape[1] if mtry is None else int(mtry)
        depth = -1 if max_depth is None else int(max_depth)
        return cls(*_grow(X, y, w, depth, int(min_leaf), mtry, int(seed)))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply(X, self.feature, self.threshold, self.left, self.right, self.value)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == _LEAF))


def _tree_seed(seed_seq: np.random.SeedSequence) -> tuple[np.random.Generator, int]:
    rng = np.random.default_rng(seed_seq)
    return rng, int(seed_seq.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    mtry: int | None = None  # default max(1, p // 3)


class RandomForestRegressor:
    def __init__(self, trees: list[Tree], oob_prediction: np.ndarray):
        self.trees = trees
        self.oob_prediction = oob_prediction

    def predict(self, F) -> np.ndarray:
        X = np.ascontiguousarray(as_matrix(F))
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def fit_random_forest(F, y, hp: ForestParams | None = None, rng: np.random.Generator | int = 0) -> RandomForestRegressor:
    """Bagged regression trees; tree ``t`` draws from a substream fixed by (seed, t)."""
    hp = hp or ForestParams()
    X = np.ascontiguousarray(as_matrix(F))
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least two rows")
    mtry = hp.mtry if hp.mtry is not None else max(1, p // 3)
    base = _seed_sequence(rng)
    trees = []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for child in base.spawn(hp.n_trees):
        trng, tseed = _tree_seed(child)
        counts = np.bincount(trng.integers(0, n, n), minlength=n).astype(np.float64)
        tree = Tree.grow(X, y, counts, hp.max_depth, hp.min_leaf, mtry, tseed)
        trees.append(tree)
        out = counts == 0
        if out.any():
            oob_sum[out] += tree.predict(X[out])
            oob_cnt[out] += 1
    with np.errstate(invalid="ignore"):
        oob = np.where(oob_cnt > 0, oob_sum / np.maximum(oob_cnt, 1), np.nan)
    return RandomForestRegressor(trees, oob)


@dataclass(frozen=True)
class BoostingParams:
    n_stages: int = 100
    depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 1


class GradientBoostingRegressor:
    def __init__(self, init: float, trees: list[Tree], learning_rate: float, train_loss: list[float]):
        self.init = init
        self.trees = trees
        self.learning_rate = learning_rate
        self.train_loss = train_loss

    def predict(self, F) -> np.ndarray:
        X = np.ascontiguousarray(as_matrix(F))
        out = np.full(X.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out


def fit_gradient_boosting(
    F, y, hp: BoostingParams | None = None, rng: np.random.Generator | int = 0
) -> GradientBoostingRegressor:
    """Stagewise least-squares boosting starting from the mean of ``y``."""
    hp = hp or BoostingParams()
    X = np.ascontiguousarray(as_matrix(F))
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise ValueError("need at least two rows")
    base = _seed_sequence(rng)
    init = float(np.mean(y))
    pred = np.full(len(y), init)
    trees = []
    loss = [float(np.mean((y - pred) ** 2))]
    for child in base.spawn(hp.n_stages):
        _, tseed = _tree_seed(child)
        tree = Tree.grow(X, y - pred, None, hp.depth, hp.min_leaf, None, tseed)
        trees.append(tree)
        pred = pred + hp.learning_rate * tree.predict(X)
        loss.append(float(np.mean((y - pred) ** 2)))
    return GradientBoostingRegressor(init, trees, hp.learning_rate, loss)


def _seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(0, 2**63)))
    return np.random.SeedSequence(int(rng))
