"""Per-object fitting of the mapping network and the code-conditioned variant."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import NeighborIndex, PointCloud, sample_unit_ball
from .losses import (
    LossReport,
    LossWeights,
    all_ordered_pairs,
    chamfer_and_grad,
    geodesic_loss_and_grad,
    sample_pairs,
)
from .network import (
    DEFAULT_HIDDEN,
    DEFAULT_LIFTING_DIM,
    AdamConfig,
    AdamState,
    HyperNetwork,
    MappingNetwork,
    adam_step,
    init_network,
)
from .soft_geodesic import SoftGeodesicContext, snapped_geodesic, soft_geodesic_batch

logger = logging.getLogger(__name__)

FULL_PAIR_LIMIT = 1024


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    steps: int = 5000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    pair_batch: int = 8192
    sample_batch: int = 2048
    seed: int = 0
    k_lambda: int = 4
    bandwidth: float | None = None
    hidden: tuple = DEFAULT_HIDDEN
    lifting_dim: int = DEFAULT_LIFTING_DIM
    compute_dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.hidden = tuple(self.hidden)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.sample_batch < 2 or self.pair_batch < 1:
            raise ValueError("sample_batch must be >= 2 and pair_batch >= 1")

    @property
    def adam(self):
        return AdamConfig(self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_epsilon)

    @property
    def layer_sizes(self):
        return (3, *self.hidden, 3 + self.lifting_dim)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _pairs_for(n, cfg, rng):
    if n <= FULL_PAIR_LIMIT:
        return all_ordered_pairs(n), 1.0 / n ** 2
    # unbiased estimate of the full (1/n^2)-normalized off-diagonal sum
    return sample_pairs(n, cfg.pair_batch, rng), (n - 1) / (n * cfg.pair_batch)


def objective(net: MappingNetwork, samples, cloud_points, ctx, cfg: TrainingConfig, rng,
              cloud_index=None):
    """Loss report and flat parameter gradient for one batch of ball samples.

    Soft geodesic targets are evaluated at the current predicted points and
    then held fixed, so no gradient flows through them.
    """
    Z, cache = net.forward(samples, keep=True, dtype=np.dtype(cfg.compute_dtype))
    Z = Z.astype(np.float64)
    if not np.all(np.isfinite(Z)):
        raise DivergenceError("non-finite network output")
    X = Z[:, :3]
    w = cfg.weights
    upstream = np.zeros_like(Z)
    lc, gc = chamfer_and_grad(X, cloud_points, y_index=cloud_index)
    upstream[:, :3] += w.lambda_c * gc
    lg, n_pairs = 0.0, 0
    if ctx is not None:
        pairs, scale = _pairs_for(len(Z), cfg, rng)
        g = soft_geodesic_batch(ctx, X, pairs)
        lg, gg = geodesic_loss_and_grad(Z, np.column_stack([pairs, g]), normalizer=scale)
        upstream += w.lambda_g * gg
        n_pairs = len(pairs)
    report = LossReport(lc, lg, w.lambda_c * lc + w.lambda_g * lg, n_pairs)
    return report, net.backward(cache, upstream)


def _guard(report, step):
    if not np.isfinite(report.total):
        raise DivergenceError(f"non-finite loss at step {step}: {report}")


def fit_object(cloud: PointCloud, ctx: SoftGeodesicContext, config: TrainingConfig = TrainingConfig(),
               net: MappingNetwork | None = None, log_every: int = 0):
    """Fit a mapping network to one normalized cloud. Returns ``(net, trace)``."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    net = init_network(cfg.layer_sizes, cfg.lifting_dim, seed=cfg.seed) if net is None else net.copy()
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    index = NeighborIndex(points)
    params = net.get_flat()
    state = AdamState.zeros(params.size)
    trace = []
    for step in range(cfg.steps):
        samples = sample_unit_ball(cfg.sample_batch, rng).samples
        report, grad = objective(net, samples, points, ctx, cfg, rng, index)
        _guard(report, step)
        trace.append(report)
        params, state = adam_step(state, params, grad, cfg.adam)
        net.set_flat(params)
        if log_every and step % log_every == 0:
            logger.info("step %d chamfer %.3e geodesic %.3e total %.3e",
                        step, report.chamfer, report.geodesic, report.total)
    return net, trace


def geodesic_errors(net, ctx, n_samples=512, n_pairs=1000, min_target=0.1, seed=12345):
    """Relative errors |g_hat - g| / g on fresh samples, with g from nearest graph vertices."""
    rng = np.random.default_rng(seed)
    Z = net.forward(sample_unit_ball(n_samples, rng).samples)
    chosen = []
    while sum(len(c) for c in chosen) < n_pairs:
        pairs = sample_pairs(len(Z), 4 * n_pairs, rng)
        g = snapped_geodesic(ctx, Z[:, :3], pairs)
        chosen.append(np.column_stack([pairs, g])[g > min_target])
    t = np.concatenate(chosen)[:n_pairs]
    i, j, g = t[:, 0].astype(int), t[:, 1].astype(int), t[:, 2]
    g_hat = np.linalg.norm(Z[i] - Z[j], axis=1)
    return np.abs(g_hat - g) / g


def hyper_fit(shapes, config: TrainingConfig = TrainingConfig(), code_dim: int = 8,
              freeze_codes: bool = False):
    """Jointly fit a linear hypernetwork and one code per shape.

    ``shapes`` is a list of ``(code, cloud, ctx)``; codes must be distinct.
    The objective is the per-object loss summed over shapes.
    """
    if len(shapes) < 1:
        raise ValueError("need at least one shape")
    codes = [np.asarray(c, dtype=float).reshape(code_dim) for c, _, _ in shapes]
    if len({c.tobytes() for c in codes}) != len(codes):
        raise ValueError("shape codes must be distinct")
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    hyper = HyperNetwork.init(code_dim, cfg.layer_sizes, seed=cfg.seed)
    n_theta = hyper.base.size
    n_gen = hyper.G.size + n_theta
    params = np.concatenate([hyper.G.ravel(), hyper.base, *codes])
    state = AdamState.zeros(params.size)
    trace = []
    for step in range(cfg.steps):
        G = params[: hyper.G.size].reshape(hyper.G.shape)
        base = params[hyper.G.size : n_gen]
        grad = np.zeros_like(params)
        total = None
        for s, (_, cloud, ctx) in enumerate(shapes):
            lo = n_gen + s * code_dim
            code = params[lo : lo + code_dim]
            net = MappingNetwork.zeros(cfg.layer_sizes).set_flat(base + G @ code)
            samples = sample_unit_ball(cfg.sample_batch, rng).samples
            points = cloud.points if isinstance(cloud, PointCloud) else cloud
            report, g_theta = objective(net, samples, points, ctx, cfg, rng)
            grad[: hyper.G.size] += np.outer(g_theta, code).ravel()
            grad[hyper.G.size : n_gen] += g_theta
            if not freeze_codes:
                grad[lo : lo + code_dim] += G.T @ g_theta
            total = report if total is None else LossReport(
                total.chamfer + report.chamfer, total.geodesic + report.geodesic,
                total.total + report.total, total.pair_count + report.pair_count)
        _guard(total, step)
        trace.append(total)
        params, state = adam_step(state, params, grad, cfg.adam)
    hyper.G = params[: hyper.G.size].reshape(hyper.G.shape).copy()
    hyper.base = params[hyper.G.size : n_gen].copy()
    hyper.codes = {s: params[n_gen + s * code_dim : n_gen + (s + 1) * code_dim].copy()
                   for s in range(len(shapes))}
    return hyper, trace
