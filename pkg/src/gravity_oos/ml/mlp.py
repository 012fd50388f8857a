"""Single-hidden-layer ReLU network with exponential output, trained on Poisson deviance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureSet, as_matrix


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpParams:
    hidden: int = 100
    max_epochs: int = 500
    tol: float = 1e-6
    batch_size: int = 200
    learning_rate: float = 1e-3
    alpha: float = 1e-4  # L2 penalty on weights
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class Params:
    W1: np.ndarray  # (p, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H,)
    b2: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def unflat(cls, v: np.ndarray, p: int, H: int) -> "Params":
        i = p * H
        return cls(v[:i].reshape(p, H).copy(), v[i : i + H].copy(), v[i + H : i + 2 * H].copy(), float(v[-1]))


def forward(params: Params, X: np.ndarray) -> np.ndarray:
    """Linear predictor (log mean) for each row."""
    h = np.maximum(X @ params.W1 + params.b1, 0.0)
    return h @ params.w2 + params.b2


def deviance_and_grad(params: Params, X: np.ndarray, y: np.ndarray, alpha: float = 0.0) -> tuple[float, Params]:
    """Mean Poisson deviance plus (alpha / 2n) * ||weights||^2, and its gradient.

    Overflow is left to show up as a non-finite loss, which the trainer reports.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _deviance_and_grad(params, X, y, alpha)


def _deviance_and_grad(params: Params, X: np.ndarray, y: np.ndarray, alpha: float) -> tuple[float, Params]:
    n = len(y)
    z = X @ params.W1 + params.b1
    h = np.maximum(z, 0.0)
    eta = h @ params.w2 + params.b2
    mu = np.exp(eta)
    ylog = np.where(y > 0, y * (np.log(y) - eta), 0.0)
    loss = 2.0 * np.mean(ylog - (y - mu))
    loss += alpha / (2 * n) * (np.sum(params.W1**2) + np.sum(params.w2**2))
    d_eta = 2.0 * (mu - y) / n
    g_w2 = h.T @ d_eta + alpha / n * params.w2
    g_b2 = float(np.sum(d_eta))
    d_z = np.outer(d_eta, params.w2) * (z > 0)
    g_W1 = X.T @ d_z + alpha / n * params.W1
    g_b1 = d_z.sum(axis=0)
    return float(loss), Params(g_W1, g_b1, g_w2, g_b2)


class PoissonMLP:
    """Fitted network. Outcomes were divided by ``y_scale`` during training."""

    def __init__(self, params: Params, y_scale: float, losses: list[float], scaler=None):
        self.params = params
        self.y_scale = y_scale
        self.losses = losses
        self.scaler = scaler

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def predict(self, F) -> np.ndarray:
        return self.y_scale * np.exp(forward(self.params, as_matrix(F)))


def fit_mlp_poisson(F: FeatureSet, y, hp: MlpParams | None = None, rng: np.random.Generator | int = 0) -> PoissonMLP:
    """Mini-batch Adam on mean Poisson deviance; stops early when the epoch loss settles."""
    hp = hp or MlpParams()
    if not isinstance(F, FeatureSet) or not F.standardized:
        raise ValueError("the Poisson network needs standardized features (build_features(..., standardize=True))")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    X = F.matrix
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("outcomes must be finite and non-negative")
    n, p = X.shape
    H = hp.hidden
    # Poisson deviance is scale-equivariant: fit y / mean(y) and rescale predictions
    y_scale = float(np.mean(y)) if np.mean(y) > 0 else 1.0
    ys = y / y_scale

    b_in = np.sqrt(6.0 / (p + H))
    b_out = np.sqrt(6.0 / (H + 1))
    params = Params(
        rng.uniform(-b_in, b_in, (p, H)),
        rng.uniform(-b_in, b_in, H),
        rng.uniform(-b_out, b_out, H) * 0.1,
        0.0,
    )
    theta = params.flat()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    batch = min(hp.batch_size, n)
    losses: list[float] = []
    prev = np.inf
    for epoch in range(1, hp.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            rows = perm[start : start + batch]
            cur = Params.unflat(theta, p, H)
            loss, g = deviance_and_grad(cur, X[rows], ys[rows], hp.alpha)
            if not np.isfinite(loss):
                raise DivergenceError(f"Poisson network diverged at epoch {epoch}")
            total += loss * len(rows)
            gv = g.flat()
            step += 1
            m = hp.beta1 * m + (1 - hp.beta1) * gv
            v = hp.beta2 * v + (1 - hp.beta2) * gv * gv
            mhat = m / (1 - hp.beta1**step)
            vhat = v / (1 - hp.beta2**step)
            theta = theta - hp.learning_rate * mhat / (np.sqrt(vhat) + hp.eps)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"Poisson network diverged at epoch {epoch}")
        losses.append(epoch_loss)
        if abs(prev - epoch_loss) <= hp.tol * max(abs(epoch_loss), 1e-12):
            break
        prev = epoch_loss
    return PoissonMLP(Params.unflat(theta, p, H), y_scale, losses, F.scaler)
