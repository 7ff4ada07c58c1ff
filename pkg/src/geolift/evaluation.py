"""Evaluation conventions: scaled Chamfer units, normal consistency and the run report."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import (
    OrientedPointSet,
    decompose_charts,
    estimate_normals,
    normal_consistency,
    purity,
    transfer_labels,
)
from .geometry import PointCloud
from .losses import chamfer
from .network import LiftedEmbedding

N_EVAL = 10_000
NORMAL_K = 16


def longest_side(points) -> float:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    return float((P.max(axis=0) - P.min(axis=0)).max())


def to_paper_units(chamfer_raw: float, points) -> float:
    """Chamfer with a tenth of the longest bounding-box side as the length unit."""
    side = longest_side(points)
    if side <= 0:
        raise ValueError("reference points have zero extent")
    return chamfer_raw / (0.1 * side) ** 2


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    chamfer_raw: float
    chamfer_paper_units: float
    normal_consistency: float | None = None
    normal_euc: float | None = None
    normal_geo: float | None = None
    geodesic_mre: float | None = None
    purity: float | None = None
    purity_xyz: float | None = None
    extra: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_chamfer(cls, chamfer_raw, reference_points, **kw):
        return cls(chamfer_raw, to_paper_units(chamfer_raw, reference_points), **kw)

    def to_dict(self):
        return asdict(self)

    def stamp(self, seed, config):
        self.metadata.update(seed=seed, config_hash=config_hash(config),
                             timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
        return self


def ground_truth_normals(gt: PointCloud) -> OrientedPointSet:
    """Analytic normals when the cloud has them, else PCA estimates at k=16."""
    normals = gt.normals if gt.normals is not None else estimate_normals(gt.points, NORMAL_K)
    return OrientedPointSet(gt.points, normals)


def evaluate_embedding(Z, gt: PointCloud, k: int = NORMAL_K, n_charts: int | None = None,
                       seed: int = 0) -> EvalReport:
    """Metrics of a lifted embedding against a normalized ground-truth cloud.

    ``normal_euc`` estimates predicted normals from 3D neighborhoods and
    ``normal_geo`` from lifted-space neighborhoods. When the cloud has labels,
    charts are clustered on W (and, for comparison, on X) and scored by purity
    against the labels transferred from the nearest ground-truth point.
    """
    Z = Z if isinstance(Z, LiftedEmbedding) else LiftedEmbedding(Z)
    raw = chamfer(Z.X, gt.points)
    gt_set = ground_truth_normals(gt)
    euc = normal_consistency(gt_set, OrientedPointSet(Z.X, estimate_normals(Z.X, k)))
    geo = normal_consistency(gt_set, OrientedPointSet(Z.X, estimate_normals(Z.X, k, features=Z)))
    report = EvalReport.from_chamfer(raw, gt.points, normal_consistency=geo, normal_euc=euc, normal_geo=geo)
    if gt.labels is not None:
        truth = transfer_labels(Z.X, gt.points, gt.labels)
        n_charts = n_charts or len(np.unique(gt.labels))
        report.purity = float(purity(decompose_charts(Z.W, n_charts, seed=seed).labels, truth))
        report.purity_xyz = float(purity(decompose_charts(Z.X, n_charts, seed=seed).labels, truth))
    return report
