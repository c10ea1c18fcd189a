"""Mixtures of per-cluster GP distance fields forming one shape model.

A shape is represented by K reference points, each with an exact GP
regressor over directions predicting the radial distance to the surface.
Softmax membership weights (from the partition quadratic forms) glue the
per-cluster fields into one likelihood and filter reconstructed points so
each cluster only emits surface where it is the dominant cluster.

All model-space coordinates are normalized: training clouds must lie within
the unit sphere (see :func:`gpshape.geometry.normalize_to_unit_sphere`), and
:func:`de_normalize` maps results back to the original frame.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import fibonacci_sphere, to_spherical
from .gp import GpRegressor, OptimizerConfig, TrainingSet, fit, initial_kernel
from .kernels import Kernel
from .partition import (
    ReferenceSet,
    assign,
    expand_overlap,
    membership_weights,
    quadratic_distances,
)

DEFAULT_OVERLAP_FRACTION = 0.15

# Predictive variances are floored here inside likelihood evaluations so a
# perfectly interpolated point cannot produce an infinite density.
VARIANCE_FLOOR = 1e-10

DIRECTION_DEDUP_TOL = 1e-9


@dataclass
class Normalization:
    """Unit-sphere normalization parameters of the model's coordinate frame."""

    center: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.scale = float(self.scale)
        if not np.all(np.isfinite(self.center)) or not np.isfinite(self.scale):
            raise ValueError("normalization must be finite")
        if self.scale <= 0.0:
            raise ValueError("normalization scale must be positive")

    @classmethod
    def identity(cls) -> "Normalization":
        return cls(center=np.zeros(3), scale=1.0)


@dataclass
class TrainingMeta:
    """Bookkeeping recorded by :func:`train` (not persisted in model files)."""

    primary_counts: np.ndarray
    training_counts: np.ndarray
    overlap_fraction: float
    seed: int | None


@dataclass
class ShapeModel:
    """K reference points with one GP distance-field regressor each."""

    refs: ReferenceSet
    regressors: list[GpRegressor]
    normalization: Normalization
    kernel_config: Kernel | None = None
    training_meta: TrainingMeta | None = None

    def __post_init__(self) -> None:
        if len(self.regressors) != len(self.refs):
            raise ValueError("need exactly one regressor per reference point")

    @property
    def n_clusters(self) -> int:
        return len(self.refs)


@dataclass
class ReconstructedCloud:
    """Surface points predicted by a model.

    ``variances`` are the GP predictive variances of the radial distances
    and ``source_cluster`` records which cluster emitted each point.
    """

    points: np.ndarray
    variances: np.ndarray
    source_cluster: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def _dedup_directions(
    directions: np.ndarray, distances: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Collapse near-identical directions, keeping the smallest distance.

    Duplicate directions arise when several surface points line up along one
    ray from the reference point; keeping the nearest one gives the field
    first-intersection semantics.
    """
    keys = np.round(directions / DIRECTION_DEDUP_TOL).astype(np.int64)
    order = np.lexsort((distances, keys[:, 1], keys[:, 0]))
    keys = keys[order]
    keep = np.ones(len(keys), dtype=bool)
    keep[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    return directions[order][keep], distances[order][keep]


def train(
    points: np.ndarray,
    refs: ReferenceSet,
    kernel_template: Kernel,
    config: OptimizerConfig | None = None,
    overlap_fraction: float = DEFAULT_OVERLAP_FRACTION,
    seed: int | None = None,
    auto_lengthscale: bool = True,
) -> ShapeModel:
    """Train one GP distance field per cluster of a normalized point cloud.

    Parameters
    ----------
    points : ndarray, shape (N, 3)
        Surface samples, normalized (norms <= 1 + 1e-9).
    refs : ReferenceSet
        Cluster anchors, e.g. from k-means or EM.
    kernel_template : Kernel
        Kernel kind / distance mode / hyperparameter starting values shared
        by all clusters.
    config : OptimizerConfig, optional
    overlap_fraction : float
        Fraction of each neighbor cluster each regressor may borrow.
    seed : int, optional
        Recorded in the training metadata (training itself is deterministic).
    auto_lengthscale : bool
        When True (default), each cluster's starting lengthscale is the
        median pairwise distance of its own inputs; disable to honor an
        explicit lengthscale in the template.

    Returns
    -------
    ShapeModel
        With identity normalization; callers track the original frame via
        :class:`Normalization` (see :func:`gpshape.io.save_model`).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValueError("points must be a non-empty (N, 3) array")
    norms = np.linalg.norm(points, axis=1)
    if norms.max() > 1.0 + 1e-9:
        raise ValueError(
            "points must be normalized into the unit sphere before training"
        )

    partition = assign(points, refs)
    for k in range(len(refs)):
        if len(partition.members(k)) == 0:
            raise ValueError(f"cluster {k} has no member points; reduce K or re-cluster")
    partition = expand_overlap(partition, points, refs, overlap_fraction)

    tasks = []
    training_counts = np.empty(len(refs), dtype=np.int64)
    for k in range(len(refs)):
        member_points = points[partition.overlap_members[k]]
        offsets = member_points - refs.centers[k]
        keep = np.linalg.norm(offsets, axis=1) > 0.0
        if not np.any(keep):
            raise ValueError(f"cluster {k} has no points distinct from its center")
        dirs, dists = to_spherical(member_points[keep], refs.centers[k])
        dirs, dists = _dedup_directions(dirs, dists)
        training_counts[k] = len(dists)
        training = TrainingSet.from_samples(dirs, dists)
        kernel = initial_kernel(kernel_template, dirs) if auto_lengthscale else kernel_template
        tasks.append((training, kernel))

    # The per-cluster fits are independent and spend their time in LAPACK
    # and numpy elementwise kernels, which release the GIL, so a thread pool
    # parallelizes training across clusters.
    workers = min(len(tasks), os.cpu_count() or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            regressors = list(
                pool.map(lambda task: fit(task[0], task[1], config), tasks)
            )
    else:
        regressors = [fit(training, kernel, config) for training, kernel in tasks]

    meta = TrainingMeta(
        primary_counts=np.array([len(partition.members(k)) for k in range(len(refs))]),
        training_counts=training_counts,
        overlap_fraction=overlap_fraction,
        seed=seed,
    )
    return ShapeModel(
        refs=refs,
        regressors=regressors,
        normalization=Normalization.identity(),
        kernel_config=kernel_template,
        training_meta=meta,
    )


def mixture_weights(point: np.ndarray, refs: ReferenceSet) -> np.ndarray:
    """Softmax membership weights of a single point over the K clusters."""
    return membership_weights(np.asarray(point, dtype=float)[None, :], refs)[0]


def point_likelihoods(points: np.ndarray, model: ShapeModel) -> np.ndarray:
    """Shape likelihood of each point under the mixture of distance fields.

    For every cluster the point's distance from the cluster center is scored
    against the GP's predictive normal at the point's direction, and the
    per-cluster densities are averaged under the membership weights.  A
    cluster whose center coincides with the point contributes nothing (its
    direction is undefined); the remaining weights are renormalized.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, k_total = len(pts), model.n_clusters
    densities = np.zeros((n, k_total))
    valid = np.ones((n, k_total), dtype=bool)
    for k in range(k_total):
        offsets = pts - model.refs.centers[k]
        radii = np.linalg.norm(offsets, axis=1)
        rows = radii > 0.0
        valid[:, k] = rows
        if not np.any(rows):
            continue
        dirs, dists = to_spherical(pts[rows], model.refs.centers[k])
        mean, var = model.regressors[k].predict_batch(dirs)
        var = np.maximum(var, VARIANCE_FLOOR)
        densities[rows, k] = np.exp(-0.5 * (dists - mean) ** 2 / var) / np.sqrt(
            2.0 * np.pi * var
        )

    exponents = -quadratic_distances(pts, model.refs)
    exponents[~valid] = -np.inf
    finite_max = np.max(np.where(valid, exponents, -np.inf), axis=1)
    has_any = np.isfinite(finite_max)
    weights = np.zeros_like(exponents)
    weights[has_any] = np.exp(exponents[has_any] - finite_max[has_any, None])
    weights[~valid] = 0.0
    totals = weights.sum(axis=1, keepdims=True)
    totals[totals == 0.0] = 1.0
    weights /= totals
    return np.sum(weights * densities, axis=1)


def point_likelihood(point: np.ndarray, model: ShapeModel) -> float:
    """Shape likelihood of one point (see :func:`point_likelihoods`)."""
    return float(point_likelihoods(np.asarray(point, dtype=float)[None, :], model)[0])


def _query_budgets(model: ShapeModel, queries_per_cluster: int, proportional: bool) -> np.ndarray:
    k_total = model.n_clusters
    if not proportional:
        return np.full(k_total, queries_per_cluster, dtype=np.int64)
    sizes = np.array([len(r.training) for r in model.regressors], dtype=float)
    total = queries_per_cluster * k_total
    raw = total * sizes / sizes.sum()
    budgets = np.floor(raw).astype(np.int64)
    shortfall = total - budgets.sum()
    if shortfall > 0:
        order = np.argsort(-(raw - budgets), kind="stable")
        budgets[order[:shortfall]] += 1
    return np.maximum(budgets, 1)


def reconstruct(
    model: ShapeModel, queries_per_cluster: int, proportional: bool = False
) -> ReconstructedCloud:
    """Predict a surface point cloud from the model.

    Each cluster is queried on a Fibonacci sphere of directions around its
    center; a candidate ``mu * u + C_k`` is kept only when its emitting
    cluster is also its argmax-membership cluster, which trims the sheets a
    regressor would otherwise extrapolate into its neighbors' territory.
    Candidates with non-positive predicted distance (a degenerate fit) are
    dropped.

    Parameters
    ----------
    model : ShapeModel
    queries_per_cluster : int
        Directions per cluster (uniform mode).
    proportional : bool
        Distribute ``K * queries_per_cluster`` directions proportionally to
        the clusters' training-set sizes instead.
    """
    if queries_per_cluster < 1:
        raise ValueError("queries_per_cluster must be >= 1")
    budgets = _query_budgets(model, queries_per_cluster, proportional)
    chunks_points, chunks_vars, chunks_src = [], [], []
    for k in range(model.n_clusters):
        bearings = fibonacci_sphere(int(budgets[k]))
        dirs, _ = to_spherical(bearings, np.zeros(3))
        mean, var = model.regressors[k].predict_batch(dirs)
        positive = mean > 0.0
        if not np.any(positive):
            continue
        candidates = mean[positive, None] * bearings[positive] + model.refs.centers[k]
        labels = np.argmin(quadratic_distances(candidates, model.refs), axis=1)
        keep = labels == k
        chunks_points.append(candidates[keep])
        chunks_vars.append(var[positive][keep])
        chunks_src.append(np.full(int(keep.sum()), k, dtype=np.int64))
    if chunks_points:
        return ReconstructedCloud(
            points=np.vstack(chunks_points),
            variances=np.concatenate(chunks_vars),
            source_cluster=np.concatenate(chunks_src),
        )
    return ReconstructedCloud(
        points=np.zeros((0, 3)), variances=np.zeros(0), source_cluster=np.zeros(0, dtype=np.int64)
    )


def de_normalize(cloud: ReconstructedCloud, model: ShapeModel) -> ReconstructedCloud:
    """Map a reconstructed cloud back to the model's original frame.

    Points map through ``p * scale + center``; radial variances scale with
    the square of the scale factor.
    """
    norm = model.normalization
    return ReconstructedCloud(
        points=cloud.points * norm.scale + norm.center,
        variances=cloud.variances * norm.scale**2,
        source_cluster=cloud.source_cluster.copy(),
    )
