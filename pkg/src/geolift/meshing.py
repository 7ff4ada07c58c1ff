"""Explicit per-chart surfaces f: [0,1]^2 -> R^3, grid triangulation and mesh sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import ChartAssignment, OrientedPointSet, decompose_charts
from .losses import chamfer, chamfer_and_grad
from .network import MLP, AdamConfig, AdamState, LiftedEmbedding, adam_step
from .training import DivergenceError

logger = logging.getLogger(__name__)

UV_HIDDEN = (64, 64)
MIN_CHART_POINTS = 16


@dataclass
class ChartSurface:
    chart_id: int
    uv_net: MLP
    fit_trace: list = field(default_factory=list)

    def evaluate(self, uv):
        return self.uv_net.forward(np.asarray(uv, dtype=float).reshape(-1, 2))


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_chart: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.face_chart is None:
            self.face_chart = np.zeros(len(self.faces), dtype=np.int64)
        self.face_chart = np.asarray(self.face_chart, dtype=np.int64).reshape(-1)
        if len(self.face_chart) != len(self.faces):
            raise ValueError("face_chart must have one entry per face")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face with a repeated vertex index")

    def face_cross(self):
        v = self.vertices[self.faces]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self):
        c = self.face_cross()
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    def charts(self):
        return np.unique(self.face_chart)


def _chart_frame(P):
    """Principal frame of a chart.

    Returns the center, the axes (columns, descending variance), the
    isotropic scale and each point's in-plane coordinate rescaled to [-1, 1]^2.
    """
    c = P.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov((P - c).T, bias=True))
    R = vecs[:, ::-1]
    local = (P - c) @ R
    lo, hi = local[:, :2].min(axis=0), local[:, :2].max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    uv = 2.0 * (local[:, :2] - lo) / span - 1.0
    return c, R, max(span.max() / 2, 1e-12), uv


def _init_output_layer(net, uv, target, ridge=1e-1):
    """Least-squares output layer so the net starts as a height field over the chart plane.

    ``ridge`` is relative to the mean feature energy; without it the solve
    produces large cancelling weights that Adam knocks apart in a few steps.
    """
    _, cache = net.forward(uv, keep=True)
    H = np.column_stack([cache[-3], np.ones(len(uv))])
    A = H.T @ H
    A += ridge * np.trace(A) / len(A) * np.eye(len(A))
    sol = np.linalg.solve(A, H.T @ target)
    net.weights[-1] = sol[:-1].T.copy()
    net.biases[-1] = sol[-1].copy()


def _fold_frame(net, c, R, s):
    """Absorb the input map uv -> 2uv - 1 and the output frame into the first and last layers."""
    W0, b0 = net.weights[0], net.biases[0]
    net.biases[0] = b0 - W0.sum(axis=1)
    net.weights[0] = 2.0 * W0
    W, b = net.weights[-1], net.biases[-1]
    net.weights[-1] = s * R @ W
    net.biases[-1] = s * R @ b + c
    return net


def fit_chart(target, steps: int = 100, seed: int = 0, batch: int | None = None,
              learning_rate: float = 1e-3, chart_id: int = 0, hidden=UV_HIDDEN) -> ChartSurface:
    """Fit a UV network to one chart's points by minimizing Chamfer distance.

    Training runs in the chart's principal frame (centered, rotated, scaled
    so the chart spans about [-1, 1]); the frame is folded into the network
    weights afterwards so the result maps [0, 1]^2 straight to object space.
    Before the Chamfer steps the output layer is solved by least squares
    against the points' own in-plane coordinates.
    """
    P = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(P) < MIN_CHART_POINTS:
        raise ValueError(f"chart has {len(P)} points; at least {MIN_CHART_POINTS} are required")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    c, R, s, uv_fit = _chart_frame(P)
    local = (P - c) @ R / s
    batch = int(np.clip(len(P), 256, 2048)) if batch is None else batch
    rng = np.random.default_rng(seed)
    net = MLP.init((2, *hidden, 3), seed=seed, activation="tanh")
    _init_output_layer(net, uv_fit, local)
    params = net.get_flat()
    state = AdamState.zeros(params.size)
    cfg = AdamConfig(learning_rate)
    trace = []
    for step in range(steps):
        uv = rng.uniform(-1.0, 1.0, size=(batch, 2))
        out, cache = net.forward(uv, keep=True)
        value, grad = chamfer_and_grad(out, local)
        if not np.isfinite(value):
            raise DivergenceError(f"chart {chart_id} diverged at step {step}")
        # report in object units
        trace.append(value * s * s)
        params, state = adam_step(state, params, net.backward(cache, grad), cfg)
        net.set_flat(params)
    return ChartSurface(chart_id, _fold_frame(net, c, R, s), trace)


def triangulate_chart(surface: ChartSurface, res: int = 12) -> TriangleMesh:
    """Evaluate on a res x res grid over the unit square; two triangles per cell."""
    if res < 2:
        raise ValueError("grid resolution must be >= 2")
    t = np.linspace(0.0, 1.0, res)
    uu, vv = np.meshgrid(t, t)
    verts = surface.evaluate(np.column_stack([uu.ravel(), vv.ravel()]))
    idx = np.arange(res * res).reshape(res, res)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return TriangleMesh(verts, faces, np.full(len(faces), surface.chart_id))


def assemble_mesh(charts, area_eps: float = 0.0) -> TriangleMesh:
    """Concatenate chart meshes with reindexed faces; zero-area faces are dropped."""
    charts = list(charts)
    if not charts:
        raise ValueError("need at least one chart mesh")
    verts, faces, labels = [], [], []
    offset = 0
    for m in charts:
        keep = m.face_areas() > area_eps
        verts.append(m.vertices)
        faces.append(m.faces[keep] + offset)
        labels.append(m.face_chart[keep])
        offset += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(faces), np.concatenate(labels))


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int = 0, return_faces: bool = False):
    """Area-weighted uniform samples; each normal is its triangle's unit normal."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.column_stack([1 - r1, r1 * (1 - r2), r1 * r2])
    tri = mesh.vertices[mesh.faces[face]]
    pts = np.einsum("nk,nkd->nd", bary, tri)
    normals = mesh.face_normals()[face]
    out = OrientedPointSet(pts, normals)
    return (out, face, bary) if return_faces else out


@dataclass
class MeshReconstruction:
    mesh: TriangleMesh
    charts: list
    assignment: ChartAssignment
    skipped: list
    chamfer: float


def reconstruct_mesh(Z, n_charts: int = 20, res: int = 12, steps: int = 100, seed: int = 0,
                     n_eval: int = 10000) -> MeshReconstruction:
    """Charts from K-means on lifting coordinates, one fitted UV surface per chart.

    Only the embedding's own point coordinates are used as fitting targets.
    The reported Chamfer compares mesh samples against those coordinates.
    """
    Z = Z if isinstance(Z, LiftedEmbedding) else LiftedEmbedding(Z)
    assignment = decompose_charts(Z.W, n_charts, seed=seed)
    surfaces, meshes, skipped = [], [], []
    for cid in range(n_charts):
        P = Z.X[assignment.labels == cid]
        if len(P) < MIN_CHART_POINTS:
            logger.warning("skipping chart %d with %d points", cid, len(P))
            skipped.append(cid)
            continue
        surf = fit_chart(P, steps=steps, seed=seed + cid, chart_id=cid)
        surfaces.append(surf)
        meshes.append(triangulate_chart(surf, res))
    if not meshes:
        raise ValueError("every chart was skipped; nothing to mesh")
    mesh = assemble_mesh(meshes)
    samples = sample_mesh_surface(mesh, n_eval, seed=seed)
    return MeshReconstruction(mesh, surfaces, assignment, skipped, chamfer(samples.points, Z.X))
