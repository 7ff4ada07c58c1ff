"""scikit-learn style wrappers around the fitting and chart pipelines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import decompose_charts
from .geodesic import all_pairs_geodesics, build_graph
from .geometry import PointCloud, normalize_to_unit_box, sample_unit_ball
from .losses import LossWeights
from .meshing import reconstruct_mesh
from .network import LiftedEmbedding
from .soft_geodesic import SoftGeodesicContext
from .training import TrainingConfig, fit_object, geodesic_errors


def check_points(X, name="X", min_samples=1):
    """Finite float array of shape (n, 3)."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples, input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have 3 columns, got {X.shape[1]}")
    return X


def check_ball_samples(S):
    S = check_points(S, "samples", min_samples=0) if len(S) else np.zeros((0, 3))
    if len(S) and np.linalg.norm(S, axis=1).max() > 1 + 1e-9:
        raise ValueError("samples must lie in the closed unit ball")
    return S


class GeodesicLifting(TransformerMixin, BaseEstimator):
    """Fit a mapping network from the unit ball to a lifted embedding of a surface cloud.

    ``fit`` normalizes the cloud to the unit box, builds the k-NN graph and its
    all-pairs geodesics, then trains the network. ``transform`` maps ball
    samples to embedding rows ``[x, y, z, w_1..w_K]`` in normalized coordinates.
    """

    def __init__(self, k=8, min_normal_dot=None, k_lambda=4, bandwidth=None, steps=5000, learning_rate=1e-3,
                 lambda_c=1.0, lambda_g=0.1, sample_batch=2048, pair_batch=8192,
                 hidden=(256, 256, 256), lifting_dim=16, seed=0, compute_dtype="float32"):
        self.k = k
        self.min_normal_dot = min_normal_dot
        self.k_lambda = k_lambda
        self.bandwidth = bandwidth
        self.steps = steps
        self.learning_rate = learning_rate
        self.lambda_c = lambda_c
        self.lambda_g = lambda_g
        self.sample_batch = sample_batch
        self.pair_batch = pair_batch
        self.hidden = hidden
        self.lifting_dim = lifting_dim
        self.seed = seed
        self.compute_dtype = compute_dtype

    def training_config(self):
        return TrainingConfig(
            steps=self.steps, learning_rate=self.learning_rate,
            weights=LossWeights(self.lambda_c, self.lambda_g), pair_batch=self.pair_batch,
            sample_batch=self.sample_batch, seed=self.seed, k_lambda=self.k_lambda,
            bandwidth=self.bandwidth, hidden=tuple(self.hidden), lifting_dim=self.lifting_dim,
            compute_dtype=self.compute_dtype,
        )

    def prepare(self, X):
        """Normalize and build the geodesic context without training."""
        cloud = X if isinstance(X, PointCloud) else PointCloud(check_points(X))
        self.cloud_, self.box_ = normalize_to_unit_box(cloud)
        self.graph_ = build_graph(self.cloud_, k=self.k, min_normal_dot=self.min_normal_dot)
        self.distances_ = all_pairs_geodesics(self.graph_)
        self.context_ = SoftGeodesicContext(self.graph_, self.distances_, self.k_lambda, self.bandwidth)
        return self

    def fit(self, X, y=None):
        return self.prepare(X)._train()

    def _train(self):
        self.network_, self.trace_ = fit_object(self.cloud_, self.context_, self.training_config())
        return self

    def fit_prepared(self, cloud, graph, distances):
        """Train on an already normalized cloud with a precomputed graph and distance matrix."""
        self.cloud_, self.box_ = cloud, None
        self.graph_, self.distances_ = graph, distances
        self.context_ = SoftGeodesicContext(graph, distances, self.k_lambda, self.bandwidth)
        return self._train()

    def transform(self, X):
        check_is_fitted(self, "network_")
        return self.network_.forward(check_ball_samples(X))

    def embed(self, n=4096, seed=0) -> LiftedEmbedding:
        """Embedding of ``n`` fresh uniform ball samples."""
        return LiftedEmbedding(self.transform(sample_unit_ball(n, seed).samples))

    def geodesic_error(self, n_pairs=1000, seed=12345):
        """Mean relative geodesic error on held-out pairs with target > 0.1."""
        check_is_fitted(self, "network_")
        return float(geodesic_errors(self.network_, self.context_, n_pairs=n_pairs, seed=seed).mean())


class ChartDecomposition(ClusterMixin, BaseEstimator):
    """K-means on the lifting coordinates of an embedding.

    ``fit`` accepts full embedding rows (the first three columns are skipped)
    or a :class:`LiftedEmbedding`.
    """

    def __init__(self, n_charts=6, seed=0, use_lifting=True):
        self.n_charts = n_charts
        self.seed = seed
        self.use_lifting = use_lifting

    def fit(self, Z, y=None):
        rows = Z.rows if isinstance(Z, LiftedEmbedding) else check_array(Z, dtype=np.float64)
        if rows.shape[1] < 4:
            raise ValueError("embedding rows need at least one lifting coordinate")
        F = rows[:, 3:] if self.use_lifting else rows[:, :3]
        self.assignment_ = decompose_charts(F, self.n_charts, seed=self.seed)
        self.labels_ = self.assignment_.labels
        self.cluster_centers_ = self.assignment_.centroids
        return self


class ChartMesher(BaseEstimator):
    """Per-chart UV surfaces fitted to an embedding, triangulated into one mesh."""

    def __init__(self, n_charts=20, res=12, steps=100, seed=0, n_eval=10000):
        self.n_charts = n_charts
        self.res = res
        self.steps = steps
        self.seed = seed
        self.n_eval = n_eval

    def fit(self, Z, y=None):
        rows = Z.rows if isinstance(Z, LiftedEmbedding) else check_array(Z, dtype=np.float64)
        self.result_ = reconstruct_mesh(rows, self.n_charts, self.res, self.steps, self.seed, self.n_eval)
        self.mesh_ = self.result_.mesh
        return self
