"""Chamfer and geodesic losses with their analytic gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import nearest


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_g: float = 0.1

    def __post_init__(self):
        for v in (self.lambda_c, self.lambda_g):
            if not np.isfinite(v) or v < 0:
                raise ValueError("loss weights must be finite and nonnegative")
        if self.lambda_c == 0 and self.lambda_g == 0:
            raise ValueError("loss weights cannot both be zero")


@dataclass(frozen=True)
class LossReport:
    chamfer: float
    geodesic: float
    total: float
    pair_count: int

    def to_dict(self):
        return asdict(self)


def _check_sets(X, Y):
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    Y = np.asarray(Y, dtype=float).reshape(-1, 3)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("Chamfer distance needs two non-empty point sets")
    return X, Y


def chamfer_matches(X, Y, method="kdtree", y_index=None):
    """Nearest Y index for every x and nearest X index for every y.

    ``y_index`` is an optional prebuilt :class:`NeighborIndex` over Y.
    """
    X, Y = _check_sets(X, Y)
    return nearest(X, Y, method=y_index or method), nearest(Y, X, method=method)


def chamfer(X, Y, method: str = "kdtree") -> float:
    """Mean squared nearest-neighbor distance, summed over both directions."""
    X, Y = _check_sets(X, Y)
    xy, yx = chamfer_matches(X, Y, method)
    return float(((X - Y[xy]) ** 2).sum(1).mean() + ((Y - X[yx]) ** 2).sum(1).mean())


def chamfer_and_grad(X, Y, method: str = "kdtree", y_index=None):
    """Chamfer value and its gradient with respect to X (fixed lowest-index subgradient)."""
    X, Y = _check_sets(X, Y)
    xy, yx = chamfer_matches(X, Y, method, y_index)
    dx = X - Y[xy]
    dy = X[yx] - Y
    value = float((dx ** 2).sum(1).mean() + (dy ** 2).sum(1).mean())
    grad = 2.0 * dx / len(X)
    back = 2.0 * dy / len(Y)
    for c in range(3):
        grad[:, c] += np.bincount(yx, weights=back[:, c], minlength=len(X))
    return value, grad


def chamfer_grad(X, Y, method: str = "kdtree") -> np.ndarray:
    return chamfer_and_grad(X, Y, method)[1]


def _split_targets(targets):
    t = np.asarray(targets, dtype=float).reshape(-1, 3)
    i = t[:, 0].astype(np.int64)
    j = t[:, 1].astype(np.int64)
    if np.any(t[:, 2] < 0):
        raise ValueError("geodesic targets must be nonnegative")
    return i, j, t[:, 2]


def geodesic_loss(Z, targets, normalizer: float | None = None) -> float:
    """Squared error between lifted distances and targets, scaled by ``1/|Z|^2``.

    ``targets`` is a sequence of ``(i, j, g_ij)`` rows. Pass ``normalizer``
    to override the default ``1/|Z|^2`` scale (e.g. for pair minibatches).
    """
    return geodesic_loss_and_grad(Z, targets, normalizer)[0]


def geodesic_loss_and_grad(Z, targets, normalizer: float | None = None):
    Z = np.asarray(Z, dtype=float)
    i, j, g = _split_targets(targets)
    scale = 1.0 / len(Z) ** 2 if normalizer is None else normalizer
    diff = Z[i] - Z[j]
    dist = np.sqrt((diff ** 2).sum(1))
    resid = dist - g
    value = float(scale * (resid ** 2).sum())
    # coincident rows have no gradient direction; use the zero subgradient
    safe = np.where(dist > 0, dist, 1.0)
    coef = np.where(dist > 0, 2.0 * scale * resid / safe, 0.0)
    contrib = coef[:, None] * diff
    grad = np.zeros_like(Z)
    for c in range(Z.shape[1]):
        grad[:, c] = np.bincount(i, weights=contrib[:, c], minlength=len(Z)) - np.bincount(
            j, weights=contrib[:, c], minlength=len(Z)
        )
    return value, grad


def geodesic_loss_grad(Z, targets, normalizer: float | None = None) -> np.ndarray:
    return geodesic_loss_and_grad(Z, targets, normalizer)[1]


def total_loss(X_pred, Y_gt, Z, targets, weights: LossWeights = LossWeights(),
               normalizer: float | None = None) -> LossReport:
    lc = chamfer(X_pred, Y_gt)
    lg = geodesic_loss(Z, targets, normalizer) if len(targets) else 0.0
    return LossReport(lc, lg, weights.lambda_c * lc + weights.lambda_g * lg, len(targets))


def all_ordered_pairs(n: int) -> np.ndarray:
    """Every (i, j) with i != j."""
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return np.column_stack([i, j])


def sample_pairs(n: int, m: int, rng) -> np.ndarray:
    """m ordered pairs drawn uniformly from the off-diagonal set."""
    i = rng.integers(0, n, size=m)
    j = rng.integers(0, n - 1, size=m)
    j += j >= i
    return np.column_stack([i, j])
