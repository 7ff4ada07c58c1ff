import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geolift.geodesic import GeodesicMatrix, all_pairs_geodesics, build_graph
from geolift.geometry import gen_shape
from geolift.soft_geodesic import (
    SoftGeodesicContext,
    path_confidences,
    rbf,
    snapped_geodesic,
    soft_geodesic,
    soft_geodesic_batch,
)


@pytest.fixture(scope="module")
def sphere_ctx():
    cloud = gen_shape("sphere", n=300, seed=0)
    graph = build_graph(cloud, k=8)
    return graph, all_pairs_geodesics(graph)


def make_ctx(vertices, D, k_lambda, bandwidth):
    graph = build_graph(np.asarray(vertices, float), k=min(2, len(vertices) - 1))
    return SoftGeodesicContext(graph, GeodesicMatrix(np.asarray(D, float)), k_lambda, bandwidth)


def brute_soft(vertices, D, k, bw, xi, xj):
    """Direct double-sum evaluation of the confidence-weighted target."""
    def lam(x):
        d = [(float(((x - v) ** 2).sum()), idx) for idx, v in enumerate(vertices)]
        return [idx for _, idx in sorted(d)[:k]]

    li, lj = lam(xi), lam(xj)
    gamma = {(p, q): math.exp(-bw * (((xi - vertices[p]) ** 2).sum() + ((xj - vertices[q]) ** 2).sum()))
             for p in li for q in lj}
    total = sum(gamma.values())
    return sum(g / total * D[p, q] for (p, q), g in gamma.items())


# --- rbf -----------------------------------------------------------------------


def test_rbf_values():
    assert rbf([1, 2, 3], [1, 2, 3]) == 1.0
    assert rbf([0, 0, 0], [1, 0, 0], 1.0) == pytest.approx(math.exp(-1), abs=1e-15)
    with pytest.raises(ValueError):
        rbf([0, 0, 0], [1, 0, 0], 0.0)


@given(st.floats(0, 5), st.floats(0, 5))
def test_rbf_decreasing(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert rbf([0, 0, 0], [lo, 0, 0]) >= rbf([0, 0, 0], [hi, 0, 0])
    if hi - lo > 1e-3 and hi < 5:
        assert rbf([0, 0, 0], [lo, 0, 0]) > rbf([0, 0, 0], [hi, 0, 0])


# --- path confidences ------------------------------------------------------------


def test_single_neighbor_alpha_is_one(sphere_ctx):
    ctx = SoftGeodesicContext(*sphere_ctx, k_lambda=1)
    alpha, li, lj = path_confidences(ctx, [0.3, 0.1, 0.2], [-1, 0, 0])
    assert alpha.tolist() == [[1.0]] and len(li) == len(lj) == 1


def test_equidistant_neighbors_give_uniform_alpha():
    V = np.array([[-1, 0, 0], [1, 0, 0], [10, -1, 0], [10, 1, 0.0]])
    D = np.array([[0, 2, 1, 3], [2, 0, 3, 1], [1, 3, 0, 2], [3, 1, 2, 0.0]])
    ctx = make_ctx(V, D, 2, 1.0)
    alpha, _, _ = path_confidences(ctx, [0, 0, 0], [10, 0, 0])
    assert np.allclose(alpha, 0.25, atol=1e-15)
    # the four paths carry D = 1, 3, 3, 1
    assert soft_geodesic(ctx, [0, 0, 0], [10, 0, 0]) == pytest.approx(2.0, abs=1e-12)


def test_far_neighbor_is_suppressed():
    V = np.array([[0, 0, 0], [10, 0, 0], [0, 50, 0], [0, 60, 0.0]])
    D = np.zeros((4, 4))
    ctx = make_ctx(V, D, 2, 1.0)
    alpha, li, _ = path_confidences(ctx, [0, 0, 0], [0, 50, 0])
    row = {int(v): alpha[p].sum() for p, v in enumerate(li)}
    assert row[0] >= 1 - 1e-40
    assert row[1] <= 1e-40


@pytest.mark.parametrize("dist", [1e-3, 1.0, 1e3])
def test_alpha_sums_to_one_at_any_distance(sphere_ctx, dist):
    ctx = SoftGeodesicContext(*sphere_ctx, k_lambda=4)
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.normal(size=(2, 3))
        x *= dist / np.linalg.norm(x, axis=1, keepdims=True)
        alpha, _, _ = path_confidences(ctx, x[0], x[1])
        assert np.all(np.isfinite(alpha)) and np.all(alpha >= 0)
        assert abs(alpha.sum() - 1) <= 1e-9


# --- soft geodesic values ------------------------------------------------------------


def test_vertex_queries_reproduce_D_with_one_neighbor(sphere_ctx):
    graph, D = sphere_ctx
    ctx = SoftGeodesicContext(graph, D, k_lambda=1)
    pairs = np.random.default_rng(0).integers(0, graph.n, size=(1000, 2))
    g = soft_geodesic_batch(ctx, graph.vertex_positions, pairs)
    assert np.array_equal(g, D.distances[pairs[:, 0], pairs[:, 1]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 50.0))
def test_matches_brute_force_double_sum(seed, bw):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(25, 3))
    graph = build_graph(V, k=5)
    D = all_pairs_geodesics(graph)
    ctx = SoftGeodesicContext(graph, D, k_lambda=4, bandwidth=bw)
    xi, xj = rng.normal(size=(2, 3))
    expected = brute_soft(V, D.distances, 4, bw, xi, xj)
    assert soft_geodesic(ctx, xi, xj) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_convex_combination_and_exact_symmetry(sphere_ctx):
    ctx = SoftGeodesicContext(*sphere_ctx, k_lambda=4)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 3)) * 0.6
    pairs = rng.integers(0, 200, size=(1000, 2))
    g = soft_geodesic_batch(ctx, X, pairs)
    g_swap = soft_geodesic_batch(ctx, X, pairs[:, ::-1])
    assert np.array_equal(g, g_swap)
    lam, _ = ctx.attach(X)
    for (i, j), val in zip(pairs[:100], g[:100]):
        sub = ctx.D.distances[np.ix_(lam[i], lam[j])]
        assert sub.min() - 1e-12 <= val <= sub.max() + 1e-12


def test_batch_equals_single(sphere_ctx):
    ctx = SoftGeodesicContext(*sphere_ctx, k_lambda=4)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    pairs = rng.integers(0, 30, size=(60, 2))
    batch = soft_geodesic_batch(ctx, X, pairs)
    single = [soft_geodesic(ctx, X[i], X[j]) for i, j in pairs]
    assert np.allclose(batch, single, rtol=0, atol=1e-12)


def test_empty_pairs_and_soft_self_distance(sphere_ctx):
    ctx = SoftGeodesicContext(*sphere_ctx, k_lambda=4)
    assert soft_geodesic_batch(ctx, np.zeros((3, 3)), []).shape == (0,)
    x = np.array([[0.2, 0.3, 0.9]])
    assert soft_geodesic_batch(ctx, x, [(0, 0)])[0] > 0


def test_translation_invariance(sphere_ctx):
    graph, D = sphere_ctx
    shift = np.array([3.0, -2.0, 7.0])
    moved = build_graph(graph.vertex_positions + shift, k=8)
    a = SoftGeodesicContext(graph, D, 4, bandwidth=20.0)
    b = SoftGeodesicContext(moved, D, 4, bandwidth=20.0)
    rng = np.random.default_rng(4)
    for xi, xj in rng.normal(size=(20, 2, 3)) * 0.7:
        assert soft_geodesic(a, xi, xj) == pytest.approx(soft_geodesic(b, xi + shift, xj + shift), abs=1e-9)


def test_vertex_order_does_not_matter(sphere_ctx):
    graph, D = sphere_ctx
    perm = np.random.default_rng(5).permutation(graph.n)
    moved = build_graph(graph.vertex_positions[perm], k=8)
    a = SoftGeodesicContext(graph, D, 4)
    b = SoftGeodesicContext(moved, GeodesicMatrix(D.distances[np.ix_(perm, perm)]), 4, a.bandwidth)
    rng = np.random.default_rng(6)
    for xi, xj in rng.normal(size=(20, 2, 3)) * 0.7:
        assert soft_geodesic(a, xi, xj) == pytest.approx(soft_geodesic(b, xi, xj), rel=1e-12)


@pytest.mark.parametrize("k_lambda", [1, 4])
def test_continuous_approach_to_vertices(sphere_ctx, k_lambda):
    graph, D = sphere_ctx
    ctx = SoftGeodesicContext(graph, D, k_lambda=k_lambda)
    a, b = 3, 120
    va, vb = graph.vertex_positions[a], graph.vertex_positions[b]
    limit = soft_geodesic(ctx, va, vb)
    if k_lambda == 1:
        assert limit == D[a, b]
    direction = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)
    errs = [abs(soft_geodesic(ctx, va + eps * direction, vb - eps * direction) - limit)
            for eps in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(e2 <= e1 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-6


def test_context_validation(sphere_ctx):
    graph, D = sphere_ctx
    with pytest.raises(ValueError):
        SoftGeodesicContext(graph, D, k_lambda=0)
    with pytest.raises(ValueError):
        SoftGeodesicContext(graph, D, bandwidth=-1.0)
    with pytest.raises(ValueError):
        SoftGeodesicContext(graph, GeodesicMatrix(np.zeros((3, 3))))


def test_snapped_geodesic_uses_nearest_vertices(sphere_ctx):
    graph, D = sphere_ctx
    ctx = SoftGeodesicContext(graph, D)
    X = graph.vertex_positions[[5, 9]] * 1.001
    assert snapped_geodesic(ctx, X, [(0, 1)])[0] == D[5, 9]
