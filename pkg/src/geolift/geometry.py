"""Point clouds, synthetic shapes, unit-box normalization and neighbor queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

SHAPE_KINDS = ("sphere", "cube", "cut_cylinder_band", "thin_plate", "torus", "swiss_roll")

SHAPE_DEFAULTS = {
    "sphere": {"radius": 1.0},
    "cube": {"edge": 1.0},
    # band of the cylinder x^2 + y^2 = radius^2 with an angular opening of
    # `gap` radians centered on the +x axis
    "cut_cylinder_band": {"radius": 0.5, "height": 0.5, "gap": np.pi / 2},
    "thin_plate": {"size": 1.0, "thickness": 0.02},
    "torus": {"major": 1.0, "minor": 0.3},
    # spiral r = t for t in [t_min, t_max], extruded along z
    "swiss_roll": {"t_min": 1.5 * np.pi, "t_max": 4.5 * np.pi, "height": 10.0},
}

# thin_plate part labels
PLATE_TOP, PLATE_BOTTOM, PLATE_EDGE = 0, 1, 2


class DegenerateInputError(ValueError):
    pass


@dataclass
class PointCloud:
    """Surface samples with optional unit normals and integer part labels."""

    points: np.ndarray
    normals: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError("normals and points differ in count")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != n:
                raise ValueError("labels and points differ in count")

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.labels is None else self.labels[idx],
        )


@dataclass
class SampleSet:
    samples: np.ndarray
    domain_dim: int = 3

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, self.domain_dim)
        if len(self.samples) and np.linalg.norm(self.samples, axis=1).max() > 1 + 1e-9:
            raise ValueError("samples must lie in the closed unit ball")

    def __len__(self):
        return len(self.samples)


@dataclass
class BoxTransform:
    """Uniform scaling about a center: ``normalized = (p - center) / scale``."""

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, points):
        return (np.asarray(points, dtype=float) - self.center) / self.scale

    def invert(self, points):
        return np.asarray(points, dtype=float) * self.scale + self.center


def _shape_params(kind, params):
    if kind not in SHAPE_DEFAULTS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    out = dict(SHAPE_DEFAULTS[kind])
    for key, value in (params or {}).items():
        if key not in out:
            raise ValueError(f"unknown parameter {key!r} for shape {kind!r}")
        out[key] = float(value)
    return out


def _positive(p, *names):
    for name in names:
        if not p[name] > 0:
            raise ValueError(f"shape parameter {name!r} must be positive, got {p[name]}")


def _rejection(rng, n, propose, accept_prob):
    """Draw n accepted proposals; proposals are arrays of shape (m, d)."""
    chunks, have = [], 0
    while have < n:
        m = max(2 * (n - have), 64)
        cand = propose(m)
        keep = cand[rng.random(m) < accept_prob(cand)]
        chunks.append(keep)
        have += len(keep)
    return np.concatenate(chunks)[:n]


def gen_shape(kind: str, params: dict | None = None, n: int = 4096, seed: int = 0) -> PointCloud:
    """Sample ``n`` points uniformly by area on a synthetic shape.

    Normals are analytic. Labels are filled for ``cube`` (face 0-5 in the
    order -x, +x, -y, +y, -z, +z) and ``thin_plate`` (top, bottom, edge).
    """
    p = _shape_params(kind, params)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = None

    if kind == "sphere":
        _positive(p, "radius")
        d = rng.standard_normal((n, 3))
        nrm = d / np.linalg.norm(d, axis=1, keepdims=True)
        pts = p["radius"] * nrm

    elif kind == "cube":
        _positive(p, "edge")
        h = p["edge"] / 2
        labels = rng.integers(0, 6, size=n)
        uv = rng.uniform(-h, h, size=(n, 2))
        axis = labels // 2
        sign = np.where(labels % 2 == 0, -1.0, 1.0)
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for a in range(3):
            sel = axis == a
            others = [b for b in range(3) if b != a]
            pts[sel, a] = sign[sel] * h
            pts[np.ix_(sel, others)] = uv[sel]
            nrm[sel, a] = sign[sel]

    elif kind == "cut_cylinder_band":
        _positive(p, "radius", "height", "gap")
        if p["gap"] >= 2 * np.pi:
            raise ValueError("gap must be < 2*pi")
        theta = rng.uniform(p["gap"] / 2, 2 * np.pi - p["gap"] / 2, size=n)
        z = rng.uniform(-p["height"] / 2, p["height"] / 2, size=n)
        nrm = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
        pts = np.column_stack([p["radius"] * nrm[:, 0], p["radius"] * nrm[:, 1], z])

    elif kind == "thin_plate":
        _positive(p, "size", "thickness")
        s, t = p["size"], p["thickness"]
        areas = np.array([s * s, s * s, 4 * s * t])
        labels = rng.choice(3, size=n, p=areas / areas.sum())
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for part, zs in ((PLATE_TOP, t / 2), (PLATE_BOTTOM, -t / 2)):
            sel = labels == part
            pts[sel, :2] = rng.uniform(-s / 2, s / 2, size=(sel.sum(), 2))
            pts[sel, 2] = zs
            nrm[sel, 2] = np.sign(zs)
        sel = np.flatnonzero(labels == PLATE_EDGE)
        side = rng.integers(0, 4, size=len(sel))
        along = rng.uniform(-s / 2, s / 2, size=len(sel))
        zz = rng.uniform(-t / 2, t / 2, size=len(sel))
        axis = side // 2
        sign = np.where(side % 2 == 0, -1.0, 1.0)
        pts[sel, 2] = zz
        pts[sel, 0] = np.where(axis == 0, sign * s / 2, along)
        pts[sel, 1] = np.where(axis == 0, along, sign * s / 2)
        nrm[sel, 0] = np.where(axis == 0, sign, 0.0)
        nrm[sel, 1] = np.where(axis == 0, 0.0, sign)

    elif kind == "torus":
        _positive(p, "major", "minor")
        big, r = p["major"], p["minor"]
        if r >= big:
            raise ValueError("torus minor radius must be smaller than major radius")
        ang = _rejection(
            rng, n,
            lambda m: rng.uniform(0, 2 * np.pi, size=(m, 2)),
            lambda c: (big + r * np.cos(c[:, 1])) / (big + r),
        )
        u, v = ang[:, 0], ang[:, 1]
        nrm = np.column_stack([np.cos(u) * np.cos(v), np.sin(u) * np.cos(v), np.sin(v)])
        ring = big + r * np.cos(v)
        pts = np.column_stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)])

    else:  # swiss_roll
        _positive(p, "t_min", "t_max", "height")
        if p["t_max"] <= p["t_min"]:
            raise ValueError("t_max must exceed t_min")
        t0, t1 = p["t_min"], p["t_max"]
        t = _rejection(
            rng, n,
            lambda m: rng.uniform(t0, t1, size=(m, 1)),
            lambda c: np.sqrt(1 + c[:, 0] ** 2) / np.sqrt(1 + t1 ** 2),
        )[:, 0]
        z = rng.uniform(0, p["height"], size=n)
        tangent = np.column_stack([np.cos(t) - t * np.sin(t), np.sin(t) + t * np.cos(t)])
        tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
        nrm = np.column_stack([tangent[:, 1], -tangent[:, 0], np.zeros(n)])
        pts = np.column_stack([t * np.cos(t), t * np.sin(t), z])

    return PointCloud(pts, nrm, labels)


def normalize_to_unit_box(cloud: PointCloud) -> tuple[PointCloud, BoxTransform]:
    """Center the bounding box at the origin and scale its longest side to 1."""
    if len(cloud) == 0:
        raise DegenerateInputError("empty point cloud")
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateInputError("all points are identical (zero extent)")
    tf = BoxTransform(center=(lo + hi) / 2, scale=extent)
    return PointCloud(tf.apply(cloud.points), cloud.normals, cloud.labels), tf


def sample_unit_ball(n: int, seed: int | np.random.Generator = 0) -> SampleSet:
    """Uniform samples in the closed unit ball (Gaussian direction, radius U^(1/3))."""
    rng = np.random.default_rng(seed)
    if n == 0:
        return SampleSet(np.zeros((0, 3)))
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / 3.0)
    return SampleSet(d * r[:, None])


def sq_dists(a, b):
    """Exact squared distances, summed coordinate-wise (no expansion trick)."""
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def _smallest_k(d, k, offset=None):
    """Column indices of the k smallest entries per row, ties by ascending index."""
    kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
    mask = d <= kth
    counts = mask.sum(axis=1)
    out = np.empty((len(d), k), dtype=np.int64)
    simple = counts == k
    if simple.any():
        cols = np.nonzero(mask[simple])[1].reshape(-1, k)
        vals = np.take_along_axis(d[simple], cols, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        out[simple] = np.take_along_axis(cols, order, axis=1)
    for r in np.flatnonzero(~simple):
        cols = np.flatnonzero(mask[r])
        out[r] = cols[np.lexsort((cols, d[r, cols]))][:k]
    return out


class NeighborIndex:
    """KD-tree over a fixed point set with the exact tie rule of the brute-force search."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        self.tree = cKDTree(self.points)

    def query(self, queries, k, exclude_self=False):
        queries = np.asarray(queries, dtype=float)
        points = self.points
        m = min(len(points), k + 1 + (1 if exclude_self else 0))
        _, cand = self.tree.query(queries, k=m)
        cand = cand.reshape(len(queries), m)
        d = ((queries[:, None, :] - points[cand]) ** 2).sum(-1)
        if exclude_self:
            d[cand == np.arange(len(queries))[:, None]] = np.inf
        order = np.lexsort((cand, d), axis=1)
        best = np.take_along_axis(cand, order, axis=1)[:, :k]
        # the shortlist is exact unless a tie run reaches its end; redo those rows
        dk = np.take_along_axis(d, order, axis=1)
        last = np.where(np.isfinite(d), d, -np.inf).max(axis=1)
        spill = (dk[:, k - 1] >= last) & (m < len(points))
        if spill.any():
            idx = np.flatnonzero(spill)
            dd = sq_dists(queries[idx], points)
            if exclude_self:
                dd[np.arange(len(idx)), idx] = np.inf
            best[idx] = _smallest_k(dd, k)
        return best


def knn_query(queries, points, k, exclude_self=False, method="brute", chunk=512):
    """k nearest rows of ``points`` for each query row, ties by ascending index.

    ``method`` is ``"brute"``, ``"kdtree"`` or a prebuilt :class:`NeighborIndex`
    over ``points``; all three return identical indices.
    """
    queries = np.asarray(queries, dtype=float)
    n = len(method.points if isinstance(method, NeighborIndex) else points)
    avail = n - 1 if exclude_self else n
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > avail:
        raise ValueError(f"k={k} too large for {n} points")
    if isinstance(method, NeighborIndex):
        return method.query(queries, k, exclude_self)
    points = np.asarray(points, dtype=float)
    if method == "kdtree":
        return NeighborIndex(points).query(queries, k, exclude_self)
    if method != "brute":
        raise ValueError(f"unknown method {method!r}")
    out = np.empty((len(queries), k), dtype=np.int64)
    for s in range(0, len(queries), chunk):
        d = sq_dists(queries[s : s + chunk], points)
        if exclude_self:
            rows = np.arange(len(d))
            d[rows, rows + s] = np.inf
        out[s : s + chunk] = _smallest_k(d, k)
    return out


def knn(points, k: int, method: str = "brute") -> np.ndarray:
    """Indices of each point's k nearest other points, shape (n, k)."""
    points = np.asarray(points, dtype=float)
    if k >= len(points):
        raise ValueError(f"k={k} must be smaller than the number of points ({len(points)})")
    return knn_query(points, points, k, exclude_self=True, method=method)


def nearest(queries, points, method="kdtree") -> np.ndarray:
    """Index of the nearest row of ``points`` for every query (lowest index on ties)."""
    return knn_query(queries, points, 1, method=method)[:, 0]
