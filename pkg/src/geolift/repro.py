"""Acceptance recipes with pinned seeds. Each suite returns a list of CriterionResult."""

from __future__ import annotations

import functools
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io
from .analysis import euclidean_neighborhood, geodesic_neighborhood, transfer_labels
from .evaluation import evaluate_embedding
from .geodesic import all_pairs_geodesics, build_graph
from .geometry import PLATE_BOTTOM, PLATE_TOP, PointCloud, gen_shape, normalize_to_unit_box, sample_unit_ball
from .losses import (
    LossWeights,
    chamfer,
    chamfer_and_grad,
    geodesic_loss,
    geodesic_loss_and_grad,
)
from .meshing import reconstruct_mesh, sample_mesh_surface
from .network import MappingNetwork, init_network
from .soft_geodesic import SoftGeodesicContext, path_confidences, soft_geodesic_batch
from .training import TrainingConfig, fit_object, geodesic_errors

SEED = 0
EVAL_SEED = 99
N_EMBED = 4096

# fit budgets per recipe
CYLINDER_STEPS = 5000
PLATE_STEPS = 3000
CUBE_STEPS = 3000
SPHERE_MESH_STEPS = 1500
PLATE_MIN_NORMAL_DOT = -0.5


@dataclass
class CriterionResult:
    criterion: str
    passed: bool
    detail: str
    seconds: float

    def to_dict(self):
        return asdict(self)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.criterion}: {self.detail} [{self.seconds:.1f}s]"


def format_table(results):
    return "\n".join(r.line() for r in results)


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


# --- shared fits ------------------------------------------------------------


@dataclass
class Fit:
    cloud: PointCloud
    ctx: SoftGeodesicContext
    net: MappingNetwork
    trace: list
    prep_seconds: float
    fit_seconds: float

    @property
    def seconds(self):
        return self.prep_seconds + self.fit_seconds

    def embed(self, n=N_EMBED, seed=EVAL_SEED):
        return self.net.forward(sample_unit_ball(n, seed).samples)


@functools.lru_cache(maxsize=None)
def _prepared(kind, n, shape_seed, k, min_normal_dot):
    t0 = time.perf_counter()
    cloud, _ = normalize_to_unit_box(gen_shape(kind, n=n, seed=shape_seed))
    graph = build_graph(cloud, k=k, min_normal_dot=min_normal_dot)
    ctx = SoftGeodesicContext(graph, all_pairs_geodesics(graph))
    return cloud, ctx, time.perf_counter() - t0


_FITS = {}


def fitted(kind, steps, lambda_g=0.1, n=4096, shape_seed=SEED, k=8, min_normal_dot=None, seed=SEED) -> Fit:
    """Fit once per configuration and share the result between criteria."""
    key = (kind, steps, lambda_g, n, shape_seed, k, min_normal_dot, seed)
    if key not in _FITS:
        cloud, ctx, prep = _prepared(kind, n, shape_seed, k, min_normal_dot)
        t0 = time.perf_counter()
        cfg = TrainingConfig(steps=steps, weights=LossWeights(1.0, lambda_g), seed=seed)
        net, trace = fit_object(cloud, ctx, cfg)
        _FITS[key] = Fit(cloud, ctx, net, trace, prep, time.perf_counter() - t0)
    return _FITS[key]


def fitted_embeddings():
    """Embeddings of every fit made so far in this process."""
    return [f.embed() for f in _FITS.values()]


# --- criteria -------------------------------------------------------------


def geodesic_oracle():
    """Sphere n=2000, k=8: Dijkstra vs great-circle distance for pairs farther than 0.2."""
    with _Timer() as t:
        cloud = gen_shape("sphere", n=2000, seed=SEED)
        D = all_pairs_geodesics(build_graph(cloud, k=8)).distances
        P = cloud.points
        truth = np.arctan2(np.linalg.norm(np.cross(P[:, None], P[None]), axis=-1), P @ P.T)
    mask = truth > 0.2
    rel = np.abs(D[mask] - truth[mask]) / truth[mask]
    ok = rel.max() < 0.05 and t.seconds < 30
    detail = (f"max rel err {rel.max():.4f} (mean {rel.mean():.4f}, "
              f"{(rel >= 0.05).mean():.2%} of pairs >= 5%), need < 0.05 and < 30 s")
    return [CriterionResult("1 geodesic oracle accuracy", bool(ok), detail, t.seconds)]


def soft_geodesic_exactness():
    """k_lambda=1 at graph vertices reproduces D; confidence grids sum to one far away."""
    with _Timer() as t:
        rng = np.random.default_rng(SEED)
        cloud = gen_shape("sphere", n=500, seed=SEED)
        graph = build_graph(cloud, k=8)
        D = all_pairs_geodesics(graph)
        ctx1 = SoftGeodesicContext(graph, D, k_lambda=1)
        pairs = rng.integers(0, graph.n, size=(1000, 2))
        g = soft_geodesic_batch(ctx1, graph.vertex_positions, pairs)
        exact_err = np.abs(g - D.distances[pairs[:, 0], pairs[:, 1]]).max()
        ctx4 = SoftGeodesicContext(graph, D, k_lambda=4)
        sums = []
        for _ in range(200):
            far = rng.standard_normal((2, 3))
            far *= 1e3 / np.linalg.norm(far, axis=1, keepdims=True)
            alpha, _, _ = path_confidences(ctx4, far[0], far[1])
            sums.append(alpha.sum())
        sum_err = np.abs(np.array(sums) - 1).max()
    ok = exact_err <= 1e-12 and sum_err <= 1e-9
    detail = f"max |g - D| {exact_err:.2e} (<= 1e-12), max |sum alpha - 1| {sum_err:.2e} (<= 1e-9)"
    return [CriterionResult("2 soft-geodesic exactness", bool(ok), detail, t.seconds)]


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gradient_check(n_instances=100):
    """Analytic gradients vs central differences on small random instances."""
    worst = {"chamfer": 0.0, "geodesic": 0.0, "network": 0.0}
    with _Timer() as t:
        rng = np.random.default_rng(SEED)
        for _ in range(n_instances):
            X, Y = rng.normal(size=(6, 3)), rng.normal(size=(7, 3))
            _, g = chamfer_and_grad(X, Y, method="brute")
            worst["chamfer"] = max(worst["chamfer"], _rel(g, _fd(lambda x: chamfer(x, Y, "brute"), X)))

            Z = rng.normal(size=(6, 5))
            pairs = np.array([(i, j) for i in range(6) for j in range(6) if i != j])
            targets = np.column_stack([pairs, rng.uniform(0.1, 3.0, len(pairs))])
            _, g = geodesic_loss_and_grad(Z, targets)
            worst["geodesic"] = max(worst["geodesic"], _rel(g, _fd(lambda z: geodesic_loss(z, targets), Z)))

            net = init_network((3, 5, 4, 6), lifting_dim=3, seed=int(rng.integers(1 << 31)))
            x = rng.uniform(-0.5, 0.5, size=(4, 3))
            up = rng.normal(size=(4, 6))
            _, cache = net.forward(x, keep=True)
            g = net.backward(cache, up)
            p0 = net.get_flat()

            def f(p):
                return float((net.copy().set_flat(p).forward(x) * up).sum())

            worst["network"] = max(worst["network"], _rel(g, _fd(f, p0)))
    ok = max(worst.values()) < 1e-4 and t.seconds < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (worst rel err, need < 1e-4)"
    return [CriterionResult("3 gradient correctness", bool(ok), detail, t.seconds)]


def pythagorean_identity(embeddings=None, n_pairs=10_000):
    """g_hat^2 - |dx|^2 == |dw|^2 and g_hat >= |dx| on random pairs of each embedding."""
    with _Timer() as t:
        if embeddings is None:
            embeddings = [_quick_embedding()]
        worst, violations = 0.0, 0
        rng = np.random.default_rng(SEED)
        for Z in embeddings:
            i = rng.integers(0, len(Z), n_pairs)
            j = rng.integers(0, len(Z), n_pairs)
            d = Z[i] - Z[j]
            g_hat = np.sqrt((d ** 2).sum(1))
            dx = np.sqrt((d[:, :3] ** 2).sum(1))
            dw2 = (d[:, 3:] ** 2).sum(1)
            lhs = g_hat ** 2 - dx ** 2
            scale = np.maximum(g_hat ** 2, np.finfo(float).tiny)
            worst = max(worst, float((np.abs(lhs - dw2) / scale).max()))
            violations += int((g_hat < dx).sum())
    ok = worst <= 1e-9 and violations == 0
    detail = f"{len(embeddings)} embeddings, worst rel gap {worst:.1e} (<= 1e-9), {violations} g_hat < |dx|"
    return [CriterionResult("4 curvature identity", bool(ok), detail, t.seconds)]


def _quick_embedding():
    cloud, _ = normalize_to_unit_box(gen_shape("sphere", n=256, seed=SEED))
    graph = build_graph(cloud, k=8)
    ctx = SoftGeodesicContext(graph, all_pairs_geodesics(graph))
    cfg = TrainingConfig(steps=10, hidden=(32, 32), sample_batch=256, seed=SEED)
    net, _ = fit_object(cloud, ctx, cfg)
    return net.forward(sample_unit_ball(2048, EVAL_SEED).samples)


def cut_cylinder():
    full = fitted("cut_cylinder_band", CYLINDER_STEPS)
    Z = full.embed()
    report = evaluate_embedding(Z, full.cloud)
    mre = float(geodesic_errors(full.net, full.ctx, n_pairs=1000).mean())
    ablation = fitted("cut_cylinder_band", CYLINDER_STEPS, lambda_g=0.0)
    mre_abl = float(geodesic_errors(ablation.net, ablation.ctx, n_pairs=1000).mean())
    ok_fit = report.chamfer_paper_units < 0.3 and mre < 0.10 and full.seconds < 600
    ok_abl = mre_abl > 1.5 * mre
    return [
        CriterionResult("5 cut-shape fit", bool(ok_fit),
                        f"chamfer {report.chamfer_paper_units:.4f} scaled units (< 0.3), "
                        f"geodesic MRE {mre:.2%} (< 10%)", full.seconds),
        CriterionResult("5 cut-shape ablation", bool(ok_abl),
                        f"MRE without geodesic loss {mre_abl:.2%} vs {mre:.2%} "
                        f"(ratio {mre_abl / mre:.2f}, need > 1.5)", ablation.fit_seconds),
    ]


def short_circuit(neighbors=16, interior=0.1):
    """Thin plate: lifted neighborhoods stay on the query's side of the plate."""
    fit = fitted("thin_plate", PLATE_STEPS, n=4000, shape_seed=2, min_normal_dot=PLATE_MIN_NORMAL_DOT)
    with _Timer() as t:
        Z = fit.embed()
        report = evaluate_embedding(Z, fit.cloud, k=neighbors)
        side = transfer_labels(Z[:, :3], fit.cloud.points, fit.cloud.labels)
        half = np.abs(fit.cloud.points[:, :2]).max()
        inner = np.abs(Z[:, :2]).max(axis=1) < half - interior
        queries = np.flatnonzero((side == PLATE_TOP) & inner)
        clean = np.zeros(len(queries), dtype=bool)
        crossed = np.zeros(len(queries), dtype=bool)
        for a, i in enumerate(queries):
            clean[a] = not np.any(side[geodesic_neighborhood(Z, i, neighbors)] == PLATE_BOTTOM)
            crossed[a] = np.any(side[euclidean_neighborhood(Z, i, neighbors)] == PLATE_BOTTOM)
    frac = float((clean & crossed).mean()) if len(queries) else 0.0
    seconds = fit.seconds + t.seconds
    return [
        CriterionResult("6 normals: geodesic >= euclidean", bool(report.normal_geo >= report.normal_euc),
                        f"normal_geo {report.normal_geo:.4f} vs normal_euc {report.normal_euc:.4f}", seconds),
        CriterionResult("6 short-circuit neighborhoods", bool(frac >= 0.95 and seconds < 600),
                        f"{frac:.1%} of {len(queries)} interior top queries clean in lifted space and "
                        f"crossed in 3D (geo clean {clean.mean():.1%}, euc crossed {crossed.mean():.1%}), "
                        f"need >= 95%", seconds),
    ]


def cube_charts():
    fit = fitted("cube", CUBE_STEPS)
    with _Timer() as t:
        report = evaluate_embedding(fit.embed(), fit.cloud, n_charts=6, seed=SEED)
    seconds = fit.seconds + t.seconds
    ok = report.purity >= 0.9 and report.purity > report.purity_xyz and seconds < 600
    detail = f"purity on W {report.purity:.3f} (>= 0.90), on X {report.purity_xyz:.3f}"
    return [CriterionResult("7 cube chart decomposition", bool(ok), detail, seconds)]


def mesh_pipeline():
    fit = fitted("sphere", SPHERE_MESH_STEPS)
    with _Timer() as t:
        Z = fit.embed()
        rec = reconstruct_mesh(Z, n_charts=6, res=12, steps=100, seed=SEED)
        samples = sample_mesh_surface(rec.mesh, 10_000, seed=SEED)
        raw = chamfer(samples.points, fit.cloud.points)
        monotone = all(s.fit_trace[-1] <= s.fit_trace[0] for s in rec.charts)
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp, "a.obj"), Path(tmp, "b.obj")
            io.write_obj(a, rec.mesh)
            back = io.read_obj(a)
            io.write_obj(b, back)
            round_trip = a.read_bytes() == b.read_bytes() and np.array_equal(back.faces, rec.mesh.faces)
    seconds = fit.seconds + t.seconds
    ok = raw < 5e-3 and monotone and round_trip and seconds < 300
    detail = (f"mesh chamfer {raw:.2e} (< 5e-3), charts {len(rec.charts)}, "
              f"traces non-increasing {monotone}, OBJ round-trip {round_trip}")
    return [CriterionResult("8 mesh pipeline", bool(ok), detail, seconds)]


def determinism():
    from .cli import cmd_fit, cmd_gen, cmd_geodesics, load_config

    def run(cmd, out, **overrides):
        return cmd(load_config(overrides={"seed": SEED, "output_dir": str(out), **overrides}))

    with _Timer() as t, tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        cloud = run(cmd_gen, root / "gen", **{"shape.n": 300})["cloud"]
        dm = run(cmd_geodesics, root / "geo", **{"inputs.cloud": cloud})["distances"]
        runs = []
        for name in ("fit1", "fit2"):
            run(cmd_fit, root / name, **{"inputs.cloud": cloud, "inputs.distances": dm, "training.steps": 20,
                                         "training.sample_batch": 256, "eval.n_embed": 256})
            runs.append((root / name / "model.ghofnn").read_bytes())
        same_ckpt = runs[0] == runs[1]
        trips = _round_trips(root)
    ok = same_ckpt and all(trips.values())
    detail = f"identical checkpoints {same_ckpt}; round-trips " + ", ".join(
        f"{k} {'ok' if v else 'FAILED'}" for k, v in trips.items())
    return [CriterionResult("9 determinism", bool(ok), detail, t.seconds)]


def _round_trips(root):
    """write -> read -> write for every format; True when the bytes match."""
    cloud = gen_shape("cube", n=200, seed=SEED)
    net = init_network((3, 8, 8, 7), lifting_dim=4, seed=SEED)
    rows = net.forward(sample_unit_ball(50, SEED).samples)
    graph = build_graph(cloud, k=8)
    D = all_pairs_geodesics(graph)
    mesh = reconstruct_mesh(rows, n_charts=2, res=4, steps=2, seed=SEED, n_eval=100).mesh
    cases = {
        "xyz": ("c.xyz", lambda p: io.write_xyz(p, cloud), lambda p, q: io.write_xyz(q, io.read_xyz(p))),
        "ply": ("c.ply", lambda p: io.write_ply(p, cloud, chart=cloud.labels),
                lambda p, q: io.write_ply(q, *io.read_ply(p, return_chart=True))),
        "ghof-dm": ("d.ghofdm", lambda p: io.write_distance_matrix(p, D),
                    lambda p, q: io.write_distance_matrix(q, io.read_distance_matrix(p))),
        "ghof-nn": ("m.ghofnn", lambda p: io.write_checkpoint(p, net),
                    lambda p, q: io.write_checkpoint(q, io.read_checkpoint(p))),
        "embedding": ("e.txt", lambda p: io.write_embedding(p, rows),
                      lambda p, q: io.write_embedding(q, io.read_embedding(p))),
        "obj": ("m.obj", lambda p: io.write_obj(p, mesh), lambda p, q: io.write_obj(q, io.read_obj(p))),
    }
    out = {}
    for name, (fname, first, again) in cases.items():
        p, q = root / ("1_" + fname), root / ("2_" + fname)
        first(p)
        again(p, q)
        out[name] = p.read_bytes() == q.read_bytes()
    return out


SUITES = {
    "geodesic-oracle": geodesic_oracle,
    "soft-geodesic": soft_geodesic_exactness,
    "gradients": gradient_check,
    "pythagoras": pythagorean_identity,
    "cut-cylinder": cut_cylinder,
    "thin-plate": short_circuit,
    "cube-charts": cube_charts,
    "mesh": mesh_pipeline,
    "determinism": determinism,
}


def run_all():
    results = []
    for key, fn in SUITES.items():
        if key not in ("pythagoras", "all"):
            results += fn()
    return results + pythagorean_identity(fitted_embeddings() + [_quick_embedding()])


SUITES["all"] = run_all


def run_suite(name):
    return SUITES[name]()
