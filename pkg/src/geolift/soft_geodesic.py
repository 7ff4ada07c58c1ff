"""Soft geodesic targets for predicted points that are off the ground-truth graph.

For a pair of predicted points each endpoint is attached to its ``k_lambda``
nearest graph vertices. Every vertex pair (p, q) gets the confidence
``exp(-bw * (|x_i - v_p|^2 + |x_j - v_q|^2))``, normalized over all pairs, and
the target is the confidence-weighted mean of the graph distances D(v_p, v_q).
The pair confidence factorizes into a softmax per endpoint, which is how it is
evaluated here (in log space, so far-away points never underflow).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geodesic import GeodesicMatrix, NeighborGraph
from .geometry import NeighborIndex, knn_query


def rbf(a, b, bandwidth: float = 1.0) -> float:
    """Gaussian kernel ``exp(-bandwidth * |a - b|^2)``."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.exp(-bandwidth * np.dot(d, d)))


def default_bandwidth(graph: NeighborGraph) -> float:
    h = float(np.mean(graph.edge_lengths()))
    return 1.0 / (h * h)


@dataclass
class SoftGeodesicContext:
    graph: NeighborGraph
    D: GeodesicMatrix
    k_lambda: int = 4
    bandwidth: float | None = None
    knn_method: str = field(default="kdtree", repr=False)

    def __post_init__(self):
        if self.k_lambda < 1:
            raise ValueError("k_lambda must be >= 1")
        if self.k_lambda > self.graph.n:
            raise ValueError("k_lambda exceeds the number of graph vertices")
        if self.D.n != self.graph.n:
            raise ValueError("graph and distance matrix differ in vertex count")
        if self.bandwidth is None:
            self.bandwidth = default_bandwidth(self.graph)
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self._index = NeighborIndex(self.vertices) if self.knn_method == "kdtree" else "brute"

    @property
    def vertices(self):
        return self.graph.vertex_positions

    def attach(self, X):
        """Neighbor sets and per-endpoint softmax weights for each row of X.

        Returns ``(lam, weights)``, both of shape (len(X), k_lambda).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = knn_query(X, self.vertices, self.k_lambda, method=self._index)
        logits = -self.bandwidth * ((X[:, None, :] - self.vertices[lam]) ** 2).sum(-1)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        return lam, w / w.sum(axis=1, keepdims=True)


def path_confidences(ctx: SoftGeodesicContext, x_i, x_j):
    """Normalized path confidences ``alpha`` (k x k) and the two neighbor lists."""
    lam, w = ctx.attach(np.vstack([x_i, x_j]))
    return np.outer(w[0], w[1]), lam[0], lam[1]


def _weighted(d_sub, wi, wj):
    # averaging both contraction orders makes g exactly symmetric under swap
    forward = np.einsum("...p,...pq,...q->...", wi, np.ascontiguousarray(d_sub), wj)
    backward = np.einsum("...q,...qp,...p->...", wj, np.ascontiguousarray(np.swapaxes(d_sub, -1, -2)), wi)
    return 0.5 * (forward + backward)


def soft_geodesic(ctx: SoftGeodesicContext, x_i, x_j) -> float:
    lam, w = ctx.attach(np.vstack([x_i, x_j]))
    d_sub = ctx.D.distances[np.ix_(lam[0], lam[1])]
    return float(_weighted(d_sub, w[0], w[1]))


def soft_geodesic_batch(ctx: SoftGeodesicContext, X, pairs) -> np.ndarray:
    """Soft geodesic for each (i, j) in ``pairs``; neighbor lookups done once per row of X."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0)
    lam, w = ctx.attach(X)
    i, j = pairs[:, 0], pairs[:, 1]
    d_sub = ctx.D.distances[lam[i][:, :, None], lam[j][:, None, :]]
    return _weighted(d_sub, w[i], w[j])


def snapped_geodesic(ctx: SoftGeodesicContext, X, pairs) -> np.ndarray:
    """Graph distance between the nearest vertices of each pair (hard assignment)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    near = knn_query(np.atleast_2d(X), ctx.vertices, 1, method=ctx._index)[:, 0]
    return ctx.D.distances[near[pairs[:, 0]], near[pairs[:, 1]]]
