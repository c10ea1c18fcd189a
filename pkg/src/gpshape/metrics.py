"""Reconstruction quality metrics for point clouds.

Compares an estimated point cloud against a ground-truth cloud via Chamfer
distance and threshold-based precision/recall/F-score, plus a per-point
error heatmap for visual inspection.  Nearest-neighbor lookups use a kd-tree;
`tests/test_metrics.py` keeps a brute-force oracle to pin the results down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_TAU = 0.01
DEFAULT_SAMPLE_SIZE = 30_000


def _as_cloud(points, name):
    """Validate a point cloud argument and return it as a float (N, 3) array.

    Parameters
    ----------
    points : array_like, shape (n, 3)
        Input point cloud.
    name : str
        Argument name used in error messages.

    Returns
    -------
    ndarray, shape (n, 3)
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def _nearest_distances(queries, targets):
    """Euclidean distance from each query point to its nearest target point."""
    distances, _ = cKDTree(targets).query(queries)
    return distances


def chamfer(gt, est):
    """Symmetric Chamfer distance between two point clouds.

    Mean squared nearest-neighbor distance from ``gt`` to ``est`` plus the
    same quantity in the opposite direction.

    Parameters
    ----------
    gt : array_like, shape (n, 3)
        Ground-truth points.
    est : array_like, shape (m, 3)
        Estimated points.

    Returns
    -------
    float
        Nonnegative distance; 0 when the clouds coincide.
    """
    gt = _as_cloud(gt, "gt")
    est = _as_cloud(est, "est")
    forward = _nearest_distances(gt, est)
    backward = _nearest_distances(est, gt)
    return float(np.mean(forward**2) + np.mean(backward**2))


def precision(gt, est, tau=DEFAULT_TAU):
    """Fraction of estimated points within ``tau`` of the ground truth.

    Uses a strict ``< tau`` comparison.

    Parameters
    ----------
    gt : array_like, shape (n, 3)
    est : array_like, shape (m, 3)
    tau : float
        Distance threshold, must be positive.

    Returns
    -------
    float in [0, 1]
    """
    gt = _as_cloud(gt, "gt")
    est = _as_cloud(est, "est")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return float(np.mean(_nearest_distances(est, gt) < tau))


def recall(gt, est, tau=DEFAULT_TAU):
    """Fraction of ground-truth points within ``tau`` of the estimate.

    Symmetric to `precision` with the roles of the clouds swapped.

    Parameters
    ----------
    gt : array_like, shape (n, 3)
    est : array_like, shape (m, 3)
    tau : float
        Distance threshold, must be positive.

    Returns
    -------
    float in [0, 1]
    """
    gt = _as_cloud(gt, "gt")
    est = _as_cloud(est, "est")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return float(np.mean(_nearest_distances(gt, est) < tau))


def fscore(p, r):
    """Harmonic mean of precision and recall; 0 when both are 0.

    Parameters
    ----------
    p, r : float in [0, 1]

    Returns
    -------
    float in [0, 1]
    """
    if not 0.0 <= p <= 1.0 or not 0.0 <= r <= 1.0:
        raise ValueError(f"precision and recall must lie in [0, 1], got {p}, {r}")
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def error_heatmap(gt, est):
    """Per-ground-truth-point distance to the nearest estimated point.

    Distances are unsquared, so values read directly as spatial error.
    Intended for export as a colored point cloud over ``gt``.

    Parameters
    ----------
    gt : array_like, shape (n, 3)
    est : array_like, shape (m, 3)

    Returns
    -------
    ndarray, shape (n,)
        Nonnegative distances, one per ground-truth point.
    """
    gt = _as_cloud(gt, "gt")
    est = _as_cloud(est, "est")
    return _nearest_distances(gt, est)


@dataclass(frozen=True)
class MetricsReport:
    """Bundle of reconstruction metrics for one ground-truth/estimate pair.

    Attributes
    ----------
    chamfer : float
        Symmetric squared-distance Chamfer value.
    precision, recall, fscore : float in [0, 1]
    tau : float
        Threshold used for precision/recall.
    n_gt, n_est : int
        Cloud sizes the metrics were computed on (after any subsampling).
    """

    chamfer: float
    precision: float
    recall: float
    fscore: float
    tau: float
    n_gt: int
    n_est: int

    def __post_init__(self):
        if self.chamfer < 0:
            raise ValueError("chamfer must be nonnegative")
        for label, value in (
            ("precision", self.precision),
            ("recall", self.recall),
            ("fscore", self.fscore),
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{label} must lie in [0, 1], got {value}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def to_json(self):
        """Serialize to a single-line JSON string.

        Reports the Chamfer value both raw and scaled by 1e3 (the scale
        customarily used in comparison tables).
        """
        return json.dumps(
            {
                "chamfer": self.chamfer,
                "chamfer_x1e3": self.chamfer * 1e3,
                "precision": self.precision,
                "recall": self.recall,
                "fscore": self.fscore,
                "tau": self.tau,
                "n_gt": self.n_gt,
                "n_est": self.n_est,
            }
        )


def evaluate(gt, est, tau=DEFAULT_TAU, max_points=DEFAULT_SAMPLE_SIZE, seed=None):
    """Compute all metrics for an estimate against a ground truth.

    Clouds larger than ``max_points`` are subsampled without replacement
    (seeded for reproducibility) before any metric is computed, keeping
    large-cloud evaluations affordable and comparable across runs.

    Parameters
    ----------
    gt : array_like, shape (n, 3)
        Ground-truth points.
    est : array_like, shape (m, 3)
        Estimated points.
    tau : float
        Threshold for precision/recall.
    max_points : int or None
        Per-cloud size cap; None disables subsampling.
    seed : int or None
        Seed for the subsampling draw.

    Returns
    -------
    MetricsReport
    """
    gt = _as_cloud(gt, "gt")
    est = _as_cloud(est, "est")
    if max_points is not None:
        if max_points < 1:
            raise ValueError(f"max_points must be positive, got {max_points}")
        rng = np.random.default_rng(seed)
        if len(gt) > max_points:
            gt = gt[rng.choice(len(gt), size=max_points, replace=False)]
        if len(est) > max_points:
            est = est[rng.choice(len(est), size=max_points, replace=False)]
    p = precision(gt, est, tau)
    r = recall(gt, est, tau)
    return MetricsReport(
        chamfer=chamfer(gt, est),
        precision=p,
        recall=r,
        fscore=fscore(p, r),
        tau=tau,
        n_gt=len(gt),
        n_est=len(est),
    )
