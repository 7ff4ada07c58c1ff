"""Ground-truth geodesics: k-NN graphs, Dijkstra distances and analytic references."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .geometry import PointCloud, _shape_params, knn, sq_dists

logger = logging.getLogger(__name__)


@dataclass
class NeighborGraph:
    """Undirected graph over surface samples, edge weight = Euclidean length.

    ``adjacency`` is a symmetric CSR matrix; ``bridges`` counts the edges that
    were added to join disconnected components.
    """

    vertex_positions: np.ndarray
    adjacency: csr_matrix
    bridges: int = 0

    @property
    def n(self):
        return len(self.vertex_positions)

    def neighbors(self, i):
        lo, hi = self.adjacency.indptr[i], self.adjacency.indptr[i + 1]
        return list(zip(self.adjacency.indices[lo:hi].tolist(), self.adjacency.data[lo:hi].tolist()))

    def edge_lengths(self):
        coo = self.adjacency.tocoo()
        upper = coo.row < coo.col
        return coo.data[upper]

    def n_components(self):
        return connected_components(self.adjacency, directed=False)[0]


@dataclass
class GeodesicMatrix:
    distances: np.ndarray

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=float)
        if self.distances.ndim != 2 or self.distances.shape[0] != self.distances.shape[1]:
            raise ValueError("distance matrix must be square")

    @property
    def n(self):
        return len(self.distances)

    def __getitem__(self, idx):
        return self.distances[idx]

    def check(self, sym_tol=0.0, diag_tol=0.0):
        """Raise ValueError unless the matrix is symmetric with a zero diagonal."""
        d = self.distances
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("distances must be finite and nonnegative")
        if np.abs(d - d.T).max(initial=0.0) > sym_tol:
            raise ValueError("distance matrix is not symmetric")
        if np.abs(np.diag(d)).max(initial=0.0) > diag_tol:
            raise ValueError("distance matrix has a nonzero diagonal")
        return self


def _graph_from_edges(points, rows, cols):
    n = len(points)
    w = np.sqrt(((points[rows] - points[cols]) ** 2).sum(axis=1))
    a = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    # union symmetrization; both directions carry the same Euclidean length
    a = a.maximum(a.T).tocsr()
    a.sort_indices()
    return a


def build_graph(cloud, k: int = 8, bridge: bool = True, min_normal_dot: float | None = None) -> NeighborGraph:
    """Symmetrized k-NN graph over the cloud, bridged into one component.

    With ``min_normal_dot`` set (and normals on the cloud), each point links to
    its k nearest points whose normals have a dot product of at least that
    value with its own. This keeps the graph from jumping across thin gaps,
    e.g. between the two sides of a plate.
    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    n = len(points)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")
    if min_normal_dot is None:
        nbrs = knn(points, k).ravel()
        rows = np.repeat(np.arange(n), k)
    else:
        normals = cloud.normals if isinstance(cloud, PointCloud) else None
        if normals is None:
            raise ValueError("min_normal_dot needs a cloud with normals")
        # the k nearest among a wider shortlist that pass the normal test
        cand = knn(points, min(3 * k, n - 1))
        ok = np.einsum("nd,nkd->nk", normals, normals[cand]) >= min_normal_dot
        ok &= np.cumsum(ok, axis=1) <= k
        rows = np.nonzero(ok)[0]
        nbrs = cand[ok]
    graph = NeighborGraph(points.copy(), _graph_from_edges(points, rows, nbrs))
    return connect_components(graph) if bridge else graph


def connect_components(graph: NeighborGraph) -> NeighborGraph:
    """Join components by repeatedly adding the globally shortest inter-component edge."""
    n_comp, comp = connected_components(graph.adjacency, directed=False)
    if n_comp <= 1:
        return graph
    pts = graph.vertex_positions
    coo = graph.adjacency.tocoo()
    rows, cols = list(coo.row), list(coo.col)
    added = 0
    while n_comp > 1:
        best = (np.inf, -1, -1)
        for s in range(0, len(pts), 512):
            d = sq_dists(pts[s : s + 512], pts)
            d[comp[s : s + 512, None] == comp[None, :]] = np.inf
            flat = int(np.argmin(d))
            i, j = divmod(flat, d.shape[1])
            if d[i, j] < best[0]:
                best = (d[i, j], i + s, j)
        _, i, j = best
        length = float(np.sqrt(best[0]))
        logger.warning("bridging components %d and %d with edge (%d, %d) of length %.6g",
                       comp[i], comp[j], i, j, length)
        rows += [i, j]
        cols += [j, i]
        comp[comp == comp[j]] = comp[i]
        n_comp -= 1
        added += 1
    adjacency = _graph_from_edges(pts, np.array(rows), np.array(cols))
    return NeighborGraph(pts, adjacency, graph.bridges + added)


def dijkstra_from(graph: NeighborGraph, source: int) -> np.ndarray:
    """Single-source shortest path lengths with a binary heap."""
    n = graph.n
    if not 0 <= source < n:
        raise IndexError(f"source {source} out of range for {n} vertices")
    indptr, indices, data = graph.adjacency.indptr, graph.adjacency.indices, graph.adjacency.data
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    done = np.zeros(n, dtype=bool)
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            nd = d + data[e]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def all_pairs_geodesics(graph: NeighborGraph) -> GeodesicMatrix:
    """All-pairs graph distances; row i is the single-source run from vertex i."""
    d = _csgraph_dijkstra(graph.adjacency, directed=False)
    if not np.all(np.isfinite(d)):
        raise ValueError("graph is disconnected; run connect_components first")
    # float sums along reversed paths can differ in the last ulp
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return GeodesicMatrix(d)


# --- analytic references -------------------------------------------------


def _box_half_extents(kind, p):
    if kind == "cube":
        return np.full(3, p["edge"] / 2)
    return np.array([p["size"] / 2, p["size"] / 2, p["thickness"] / 2])


def _box_faces(x, h, tol):
    faces = [(a, s) for a in range(3) for s in (-1, 1) if abs(x[a] - s * h[a]) <= tol]
    if not faces or np.any(np.abs(x) > h + tol):
        raise ValueError(f"point {x} is not on the box surface")
    return faces


def _box_face_pair(x, y, fx, fy, h, thin_plate):
    (a, sa), (b, sb) = fx, fy
    if fx == fy:
        return float(np.linalg.norm(x - y))
    if a != b:
        # unfold face b into the plane of face a across their shared edge
        c = 3 - a - b
        dx = h[b] - sb * x[b]
        dy = h[a] - sa * y[a]
        return float(np.hypot(dx + dy, x[c] - y[c]))
    if not thin_plate:
        raise ValueError("geodesics between opposite cube faces are not supported")
    # opposite faces: cross exactly one side face of width 2*h[a]
    best = np.inf
    for side in (ax for ax in range(3) if ax != a):
        c = 3 - a - side
        for s in (-1, 1):
            run = (h[side] - s * x[side]) + 2 * h[a] + (h[side] - s * y[side])
            best = min(best, float(np.hypot(run, x[c] - y[c])))
    return best


def analytic_geodesic(kind: str, params: dict | None, p, q, tol: float = 1e-6) -> float:
    """Exact surface geodesic between two points on a synthetic shape.

    Supported: ``sphere``, ``cut_cylinder_band`` (the band unrolls to a
    rectangle), ``cube`` (same or adjacent faces) and ``thin_plate`` (any two
    faces, paths crossing at most one side face).
    """
    pr = _shape_params(kind, params)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)

    if kind == "sphere":
        r = pr["radius"]
        for x in (p, q):
            if abs(np.linalg.norm(x) - r) > tol:
                raise ValueError(f"point {x} is not on the sphere of radius {r}")
        return float(r * np.arctan2(np.linalg.norm(np.cross(p, q)), np.dot(p, q)))

    if kind == "cut_cylinder_band":
        r, hh, gap = pr["radius"], pr["height"] / 2, pr["gap"]
        thetas = []
        for x in (p, q):
            th = np.arctan2(x[1], x[0]) % (2 * np.pi)
            if abs(np.hypot(x[0], x[1]) - r) > tol or abs(x[2]) > hh + tol:
                raise ValueError(f"point {x} is not on the band")
            if th < gap / 2 - tol / r or th > 2 * np.pi - gap / 2 + tol / r:
                raise ValueError(f"point {x} lies in the cut")
            thetas.append(th)
        return float(np.hypot(r * (thetas[0] - thetas[1]), p[2] - q[2]))

    if kind in ("cube", "thin_plate"):
        h = _box_half_extents(kind, pr)
        fp, fq = _box_faces(p, h, tol), _box_faces(q, h, tol)
        return min(_box_face_pair(p, q, a, b, h, kind == "thin_plate") for a in fp for b in fq)

    raise ValueError(f"no analytic geodesic for shape {kind!r}")
