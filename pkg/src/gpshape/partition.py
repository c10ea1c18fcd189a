"""Reference-point selection and point-cloud partitioning.

A shape is split into clusters, each anchored at a reference point ``C_k``
with a symmetric positive-definite weight matrix ``Q_k``.  Points are
assigned to the cluster whose quadratic form ``(p - C_k)^T Q_k (p - C_k)``
is smallest, which is also the argmax of the softmax membership weights.
Clusters can additionally borrow high-affinity points from their neighbors
("overlap") so the per-cluster regressors blend smoothly at the seams.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

KMEANS_TOL = 1e-6
KMEANS_MAX_ITERS = 300
EM_TOL = 1e-7
EM_MAX_ITERS = 200
COVARIANCE_FLOOR = 1e-6


@dataclass
class ReferenceSet:
    """Cluster anchors.

    Attributes
    ----------
    centers : ndarray, shape (K, 3)
    weight_matrices : ndarray, shape (K, 3, 3)
        Symmetric positive-definite matrices entering the membership
        quadratic form; the identity for k-means and manual centers,
        ``inv(covariance) / 2`` for EM clusters.
    source : str
        One of ``"kmeans"``, ``"em"``, ``"manual"``.
    """

    centers: np.ndarray
    weight_matrices: np.ndarray
    source: str

    def __post_init__(self) -> None:
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.weight_matrices = np.asarray(self.weight_matrices, dtype=float)
        k = len(self.centers)
        if k < 1 or self.centers.shape != (k, 3):
            raise ValueError("centers must have shape (K, 3) with K >= 1")
        if self.weight_matrices.shape != (k, 3, 3):
            raise ValueError("weight_matrices must have shape (K, 3, 3)")
        for q in self.weight_matrices:
            if not np.allclose(q, q.T, atol=1e-10):
                raise ValueError("weight matrices must be symmetric")
            if np.linalg.eigvalsh(q)[0] <= 0.0:
                raise ValueError("weight matrices must be positive definite")

    @classmethod
    def manual(cls, centers: np.ndarray) -> "ReferenceSet":
        """User-supplied centers with identity weight matrices."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        return cls(
            centers=centers,
            weight_matrices=np.broadcast_to(np.eye(3), (len(centers), 3, 3)).copy(),
            source="manual",
        )

    def __len__(self) -> int:
        return len(self.centers)


@dataclass
class Partition:
    """Hard assignment plus per-cluster (possibly overlapping) member lists."""

    assignment: np.ndarray
    overlap_members: list[np.ndarray]

    def members(self, k: int) -> np.ndarray:
        """Primary member indices of cluster ``k`` (no overlap)."""
        return np.flatnonzero(self.assignment == k)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers with D^2 sampling."""
    n = len(points)
    centers = np.empty((k, 3))
    centers[0] = points[rng.integers(n)]
    closest_sq = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest_sq.sum()
        if total == 0.0:
            centers[i:] = centers[0]
            break
        probs = closest_sq / total
        centers[i] = points[rng.choice(n, p=probs)]
        dist_sq = np.sum((points - centers[i]) ** 2, axis=1)
        closest_sq = np.minimum(closest_sq, dist_sq)
    return centers


def kmeans(
    points: np.ndarray, k: int, seed: int, max_iters: int = KMEANS_MAX_ITERS
) -> ReferenceSet:
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic for a fixed seed.  Converged when the largest center
    movement falls below 1e-6.  A cluster that loses all its points is
    re-seeded at the point farthest from its assigned center.

    Returns a :class:`ReferenceSet` with identity weight matrices.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    if k < 1 or k > len(points):
        raise ValueError("need 1 <= k <= number of points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(points, k, rng)

    for _ in range(max_iters):
        labels = np.argmin(cdist(points, centers), axis=1)
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if np.any(mask):
                new_centers[j] = points[mask].mean(axis=0)
            else:
                # Re-seed a starved cluster at the worst-represented point.
                dist_to_own = np.linalg.norm(points - centers[labels], axis=1)
                new_centers[j] = points[np.argmax(dist_to_own)]
        move = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        if move < KMEANS_TOL:
            break

    return ReferenceSet(
        centers=centers,
        weight_matrices=np.broadcast_to(np.eye(3), (k, 3, 3)).copy(),
        source="kmeans",
    )


def _gaussian_log_density(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    L = cholesky(cov, lower=True, check_finite=False)
    solved = np.linalg.solve(L, (points - mean).T)
    maha_sq = np.sum(solved**2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (maha_sq + log_det + 3.0 * np.log(2.0 * np.pi))


def _floor_covariance(cov: np.ndarray) -> np.ndarray:
    """Clamp eigenvalues from below at the covariance floor."""
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] >= COVARIANCE_FLOOR:
        return cov
    warnings.warn("collapsed mixture component; flooring its covariance", stacklevel=3)
    eigval = np.maximum(eigval, COVARIANCE_FLOOR)
    return (eigvec * eigval) @ eigvec.T


def _fit_gmm(
    points: np.ndarray, k: int, seed: int, max_iters: int = EM_MAX_ITERS
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    """Full-covariance EM.  Returns (means, covariances, weights, ll_history)."""
    n = len(points)
    init = kmeans(points, k, seed)
    means = init.centers.copy()
    labels = np.argmin(cdist(points, means), axis=1)
    covs = np.empty((k, 3, 3))
    weights = np.empty(k)
    for j in range(k):
        mask = labels == j
        weights[j] = max(mask.sum(), 1) / n
        member = points[mask] if np.any(mask) else points
        covs[j] = _floor_covariance(np.cov(member.T, bias=True).reshape(3, 3))
    weights /= weights.sum()

    history: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        # E-step in log space.
        log_resp = np.empty((n, k))
        for j in range(k):
            log_resp[:, j] = np.log(weights[j]) + _gaussian_log_density(points, means[j], covs[j])
        log_norm = np.logaddexp.reduce(log_resp, axis=1)
        ll = float(log_norm.sum())
        history.append(ll)
        resp = np.exp(log_resp - log_norm[:, None])

        # M-step.
        counts = resp.sum(axis=0)
        counts = np.maximum(counts, 1e-300)
        weights = counts / n
        means = (resp.T @ points) / counts[:, None]
        for j in range(k):
            centered = points - means[j]
            covs[j] = _floor_covariance(
                (resp[:, j, None] * centered).T @ centered / counts[j]
            )

        if ll - prev_ll < EM_TOL and np.isfinite(prev_ll):
            break
        prev_ll = ll

    return means, covs, weights, history


def em_gmm(points: np.ndarray, k: int, seed: int, max_iters: int = EM_MAX_ITERS) -> ReferenceSet:
    """Full-covariance Gaussian-mixture clustering via EM.

    Initialized from :func:`kmeans` on the same seed; covariance eigenvalues
    are floored at 1e-6 to survive degenerate clusters.  Convergence is
    declared when the data log-likelihood gains less than 1e-7.

    The returned weight matrices are ``inv(covariance) / 2`` so the
    membership quadratic form equals half the squared Mahalanobis distance.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    if len(points) < 4 * k:
        raise ValueError("EM clustering needs at least 4*k points")
    means, covs, _, _ = _fit_gmm(points, k, seed, max_iters)
    qs = np.empty_like(covs)
    for j in range(len(covs)):
        L = cholesky(covs[j], lower=True, check_finite=False)
        inv = cho_solve((L, True), np.eye(3), check_finite=False)
        precision = 0.5 * (inv + inv.T)  # symmetrize round-off
        qs[j] = precision / 2.0
    return ReferenceSet(centers=means, weight_matrices=qs, source="em")


def quadratic_distances(points: np.ndarray, refs: ReferenceSet) -> np.ndarray:
    """Membership quadratic forms ``(p - C_k)^T Q_k (p - C_k)``, shape (N, K)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((len(points), len(refs)))
    for j in range(len(refs)):
        rel = points - refs.centers[j]
        out[:, j] = np.einsum("ni,ij,nj->n", rel, refs.weight_matrices[j], rel)
    return out


def membership_weights(points: np.ndarray, refs: ReferenceSet) -> np.ndarray:
    """Softmax membership weights over clusters, shape (N, K).

    Computed with max-subtraction; rows sum to one.
    """
    neg = -quadratic_distances(points, refs)
    neg -= neg.max(axis=1, keepdims=True)
    w = np.exp(neg)
    w /= w.sum(axis=1, keepdims=True)
    return w


def assign(points: np.ndarray, refs: ReferenceSet) -> Partition:
    """Hard-assign each point to its argmax-weight cluster (ties: lowest index)."""
    points = np.asarray(points, dtype=float)
    quad = quadratic_distances(points, refs)
    labels = np.argmin(quad, axis=1)
    members = [np.flatnonzero(labels == j) for j in range(len(refs))]
    return Partition(assignment=labels, overlap_members=members)


def expand_overlap(
    partition: Partition,
    points: np.ndarray,
    refs: ReferenceSet,
    overlap_fraction: float,
) -> Partition:
    """Let each cluster borrow its highest-affinity neighbors' points.

    For every ordered pair (k, j != k), cluster ``k`` takes from cluster
    ``j`` the members with the highest membership weight for ``k``, at most
    ``floor(overlap_fraction * |cluster j|)`` of them, and only those at or
    above the 80th percentile of weight-for-``k`` among ``j``'s members.
    Primary membership is never removed.
    """
    if not 0.0 <= overlap_fraction <= 1.0:
        raise ValueError("overlap_fraction must be within [0, 1]")
    k_total = len(refs)
    if overlap_fraction == 0.0 or k_total == 1:
        return Partition(
            assignment=partition.assignment.copy(),
            overlap_members=[m.copy() for m in partition.overlap_members],
        )
    # Affinities are gated and ordered in log space: ranks match the softmax
    # weights exactly, but tight weight matrices (e.g. from EM) cannot
    # underflow a whole donor column to zeros and erase the ordering.
    neg_quads = -quadratic_distances(points, refs)
    log_weights = neg_quads - logsumexp(neg_quads, axis=1, keepdims=True)
    expanded = []
    for k in range(k_total):
        extra = []
        for j in range(k_total):
            if j == k:
                continue
            donors = partition.members(j)
            if len(donors) == 0:
                continue
            w_k = log_weights[donors, k]
            budget = int(np.floor(overlap_fraction * len(donors)))
            gate = w_k >= np.percentile(w_k, 80.0)
            eligible = donors[gate]
            take = min(budget, len(eligible))
            if take > 0:
                order = np.argsort(-w_k[gate], kind="stable")
                extra.append(eligible[order[:take]])
        merged = np.concatenate([partition.members(k), *extra]) if extra else partition.members(k)
        expanded.append(np.sort(merged))
    return Partition(assignment=partition.assignment.copy(), overlap_members=expanded)


def exterior_center_fractions(
    points: np.ndarray, refs: ReferenceSet, partition: Partition
) -> np.ndarray:
    """Per-cluster fraction of members whose segment to the center leaves the
    cloud's convex hull.

    Diagnostic only — a high fraction flags a reference point sitting outside
    the cloud, a poor anchor for a radial distance field.  Because the hull
    is convex and every member point lies inside it, a member's segment exits
    the hull exactly when the center itself is outside.
    """
    from scipy.spatial import Delaunay

    points = np.asarray(points, dtype=float)
    try:
        hull = Delaunay(points)
        inside = hull.find_simplex(refs.centers) >= 0
    except Exception:
        # Degenerate (flat or tiny) clouds: no 3D hull, call every center exterior.
        inside = np.zeros(len(refs), dtype=bool)
    fractions = np.empty(len(refs))
    for k in range(len(refs)):
        n_members = len(partition.members(k))
        if n_members == 0:
            fractions[k] = 0.0
        else:
            fractions[k] = 0.0 if inside[k] else 1.0
    return fractions
