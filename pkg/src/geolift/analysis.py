"""Consumers of a lifted embedding: neighborhoods, normals, charts, curvature proxy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import _smallest_k, knn, knn_query, nearest, sq_dists
from .network import LiftedEmbedding


@dataclass
class OrientedPointSet:
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals differ in count")
        if len(self.normals) and np.abs(np.linalg.norm(self.normals, axis=1) - 1).max() > 1e-6:
            raise ValueError("normals must be unit length")

    def __len__(self):
        return len(self.points)


@dataclass
class ChartAssignment:
    labels: np.ndarray
    n_charts: int
    centroids: np.ndarray
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self):
        return self.inertia_history[-1]


def _rows(Z):
    return Z.rows if isinstance(Z, LiftedEmbedding) else np.asarray(Z, dtype=float)


def _neighborhood(F, i, k):
    n = len(F)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    d = sq_dists(F[i : i + 1], F)
    d[0, i] = np.inf
    return _smallest_k(d, k)[0]


def euclidean_neighborhood(X, i: int, k: int) -> np.ndarray:
    """k nearest rows to X[i] by 3D distance, excluding i, ties by index."""
    return _neighborhood(np.asarray(X, dtype=float)[:, :3], i, k)


def geodesic_neighborhood(Z, i: int, k: int) -> np.ndarray:
    """k nearest rows to Z[i] in the full lifted space."""
    return _neighborhood(_rows(Z), i, k)


def estimate_normal(points) -> np.ndarray:
    """Unit normal of a neighborhood from its smallest principal axis.

    The sign makes the largest-magnitude component positive.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(P) < 3:
        raise ValueError(f"need at least 3 points to estimate a normal, got {len(P)}")
    C = np.cov(P.T, bias=True)
    vals, vecs = np.linalg.eigh(C)
    if vals[1] <= 1e-12 * max(vals[2], np.finfo(float).tiny):
        raise ValueError("degenerate neighborhood: points are collinear or coincident")
    return _orient(vecs[:, 0])


def _orient(n):
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    big = np.take_along_axis(n, np.abs(n).argmax(axis=-1)[..., None], axis=-1)
    return n * np.where(big < 0, -1.0, 1.0)


def estimate_normals(X, k: int = 16, features=None) -> np.ndarray:
    """Normals for every row of X from its k-neighborhood (plus the point itself).

    Neighborhoods are found in ``features`` (default: X itself); pass the full
    lifted rows to get geodesic neighborhoods. Degenerate neighborhoods are
    not rejected here; they simply yield an arbitrary axis.
    """
    X = np.asarray(X, dtype=float)
    F = X if features is None else _rows(features)
    nbrs = knn(F, k, method="kdtree")
    hood = X[np.column_stack([np.arange(len(X)), nbrs])]
    centered = hood - hood.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / hood.shape[1]
    _, vecs = np.linalg.eigh(cov)
    return _orient(vecs[:, :, 0])


def normal_consistency(gt: OrientedPointSet, pred: OrientedPointSet) -> float:
    """Mean |n_gt . n_pred| over ground-truth points, pairing each with its nearest prediction."""
    if len(gt) == 0 or len(pred) == 0:
        raise ValueError("normal consistency needs two non-empty oriented sets")
    idx = nearest(gt.points, pred.points)
    dots = np.abs((gt.normals * pred.normals[idx]).sum(axis=1))
    return float(np.clip(dots.mean(), 0.0, 1.0))


# --- chart decomposition -------------------------------------------------


def _kmeans_pp(F, k, rng):
    n = len(F)
    centers = [F[rng.integers(n)]]
    closest = ((F - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(F[idx])
        closest = np.minimum(closest, ((F - F[idx]) ** 2).sum(1))
    return np.array(centers)


def kmeans(F, n_clusters: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6) -> ChartAssignment:
    """Lloyd iterations from k-means++ seeds.

    Empty clusters are re-seeded to the point farthest from its centroid.
    Stops when no centroid moves more than ``tol``.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    n = len(F)
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > n:
        raise ValueError(f"n_clusters={n_clusters} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(F, n_clusters, rng)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = sq_dists(F, centers)
        labels = d.argmin(axis=1)
        best = d[np.arange(n), labels]
        history.append(float(best.sum()))
        counts = np.bincount(labels, minlength=n_clusters)
        for c in np.flatnonzero(counts == 0):
            far = int(best.argmax())
            labels[far] = c
            best[far] = 0.0
            counts = np.bincount(labels, minlength=n_clusters)
        new = np.vstack([F[labels == c].mean(axis=0) for c in range(n_clusters)])
        shift = np.sqrt(((new - centers) ** 2).sum(1)).max()
        centers = new
        if shift < tol:
            break
    d = sq_dists(F, centers)
    labels = d.argmin(axis=1)
    history.append(float(d[np.arange(n), labels].sum()))
    return ChartAssignment(labels, n_clusters, centers, history, it)


def decompose_charts(W, n_charts: int = 6, seed: int = 0) -> ChartAssignment:
    """K-means on lifting coordinates (accepts a LiftedEmbedding or a raw array)."""
    F = W.W if isinstance(W, LiftedEmbedding) else W
    return kmeans(F, n_charts, seed=seed)


def purity(pred_labels, true_labels) -> float:
    """Size-weighted majority-label fraction of the predicted clusters."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    total = 0
    for c in np.unique(pred):
        total += np.bincount(true[pred == c]).max()
    return total / len(pred)


def transfer_labels(X, points, labels, method="kdtree") -> np.ndarray:
    """Label of the nearest reference point for each row of X."""
    return np.asarray(labels)[knn_query(np.asarray(X, dtype=float)[:, :3], points, 1, method=method)[:, 0]]


def curvature_proxy(Z, i, j):
    """Squared lifted distance minus squared 3D distance, i.e. |w_i - w_j|^2."""
    R = _rows(Z)
    dw = R[i, 3:] - R[j, 3:]
    return (dw ** 2).sum(axis=-1)
