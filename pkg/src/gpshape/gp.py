"""Exact Gaussian process regression on directional distance samples.

A regressor models the radial distance to a surface as a zero-mean GP over
directions ``psi = (phi, theta)`` after subtracting the empirical target
mean (re-added at prediction time).  Inference is exact: the jittered Gram
matrix is Cholesky-factorized once per hyperparameter setting and cached on
the regressor.

Hyperparameters are optimized by gradient ascent on the log marginal
likelihood with Adam in log-space, with a plateau learning-rate schedule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.spatial.distance import pdist

from .kernels import Kernel, direction_features

INITIAL_JITTER = 1e-6
MAX_JITTER = 1e-2

_LOG_2PI = np.log(2.0 * np.pi)

# Query chunk size for batched prediction; bounds the (chunk, M) work arrays.
_PREDICT_CHUNK = 4096


@dataclass
class TrainingSet:
    """Directional distance samples for one regressor.

    Attributes
    ----------
    inputs : ndarray, shape (M, 2)
        Directions ``(phi, theta)``.
    targets : ndarray, shape (M,)
        Nonnegative radial distances.
    target_mean : float
        Mean subtracted from the targets before fitting and added back to
        predicted means.
    """

    inputs: np.ndarray
    targets: np.ndarray
    target_mean: float

    def __post_init__(self) -> None:
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.inputs.shape != (len(self.targets), 2) or len(self.targets) < 1:
            raise ValueError("inputs must be (M, 2) with M >= 1 matching targets")
        if not np.all(np.isfinite(self.inputs)) or not np.all(np.isfinite(self.targets)):
            raise ValueError("training data must be finite")
        if np.any(self.targets < 0.0):
            raise ValueError("targets are distances and must be nonnegative")

    @classmethod
    def from_samples(cls, inputs: np.ndarray, targets: np.ndarray) -> "TrainingSet":
        """Build a training set, centering on the empirical target mean."""
        targets = np.asarray(targets, dtype=float).ravel()
        return cls(inputs=inputs, targets=targets, target_mean=float(targets.mean()))

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class OptimizerConfig:
    """Settings for the log-space Adam optimizer with plateau scheduling."""

    initial_lr: float = 0.1
    plateau_patience: int = 10
    lr_decay: float = 0.1
    max_iters: int = 200
    min_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # An iteration counts as an improvement only if the log marginal
    # likelihood rises by more than this.
    improvement_tol: float = 1e-6


def _cholesky_with_escalation(gram: np.ndarray, initial_jitter: float = INITIAL_JITTER):
    """Lower-Cholesky factor of ``gram + jitter * I``, escalating the jitter.

    Starts at ``initial_jitter`` and multiplies by 10 on failure, up to
    ``MAX_JITTER``; raises if the matrix cannot be factorized even then.

    Returns
    -------
    (L, jitter) : (ndarray, float)
    """
    eye = np.eye(len(gram))
    jitter = initial_jitter
    while True:
        try:
            L = cholesky(gram + jitter * eye, lower=True, check_finite=False)
            return L, jitter
        except LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER * (1.0 + 1e-12):
                raise LinAlgError(
                    f"Gram matrix is not positive definite even with jitter {MAX_JITTER}"
                ) from None


@dataclass
class GpRegressor:
    """An exact GP posterior with cached Cholesky factor.

    Attributes
    ----------
    kernel : Kernel
    training : TrainingSet
    jitter : float
        Diagonal noise actually used in the factorization.
    chol : ndarray, shape (M, M)
        Lower Cholesky factor of ``K + jitter * I``.
    alpha : ndarray, shape (M,)
        ``(K + jitter * I)^-1 (targets - target_mean)``.
    """

    kernel: Kernel
    training: TrainingSet
    jitter: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @classmethod
    def build(
        cls, kernel: Kernel, training: TrainingSet, jitter: float = INITIAL_JITTER
    ) -> "GpRegressor":
        """Factorize the training Gram matrix and precompute the solve."""
        gram = kernel.gram(training.inputs)
        L, used_jitter = _cholesky_with_escalation(gram, jitter)
        centered = training.targets - training.target_mean
        alpha = cho_solve((L, True), centered, check_finite=False)
        return cls(kernel=kernel, training=training, jitter=used_jitter, chol=L, alpha=alpha)

    def predict_batch(self, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at many directions.

        Parameters
        ----------
        directions : ndarray, shape (N, 2)

        Returns
        -------
        means : ndarray, shape (N,)
        variances : ndarray, shape (N,)
            Clamped to be nonnegative.
        """
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
        if len(dirs) == 0:
            return np.zeros(0), np.zeros(0)
        means = np.empty(len(dirs))
        variances = np.empty(len(dirs))
        for lo in range(0, len(dirs), _PREDICT_CHUNK):
            hi = min(len(dirs), lo + _PREDICT_CHUNK)
            chunk = dirs[lo:hi]
            cross = self.kernel(chunk, self.training.inputs)
            means[lo:hi] = self.training.target_mean + cross @ self.alpha
            v = solve_triangular(self.chol, cross.T, lower=True, check_finite=False)
            raw = self.kernel.diag(chunk) - np.einsum("ij,ij->j", v, v)
            variances[lo:hi] = np.maximum(raw, 0.0)
        return means, variances

    def predict(self, direction: np.ndarray) -> tuple[float, float]:
        """Posterior mean and variance at a single direction ``(phi, theta)``."""
        means, variances = self.predict_batch(np.asarray(direction, dtype=float)[None, :])
        return float(means[0]), float(variances[0])


def log_marginal_likelihood(regressor: GpRegressor) -> float:
    """Log marginal likelihood of the regressor's training data.

    ``-1/2 y^T Kj^-1 y - 1/2 log|Kj| - (M/2) log(2 pi)`` with ``Kj`` the
    jittered Gram matrix and ``y`` the centered targets.
    """
    y = regressor.training.targets - regressor.training.target_mean
    m = len(y)
    log_det_half = np.sum(np.log(np.diag(regressor.chol)))
    return float(-0.5 * y @ regressor.alpha - log_det_half - 0.5 * m * _LOG_2PI)


def _evaluate_lml_and_grad(
    kernel: Kernel, pairs: np.ndarray, centered: np.ndarray, jitter: float
) -> tuple[float, np.ndarray, float]:
    """LML and its gradient w.r.t. log-hyperparameters from cached pair stats."""
    gram, grads = kernel.value_and_grads_from_pairs(pairs)
    L, used_jitter = _cholesky_with_escalation(gram, jitter)
    alpha = cho_solve((L, True), centered, check_finite=False)
    m = len(centered)
    lml = -0.5 * centered @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * m * _LOG_2PI
    # dpotri inverts from the factor at half the cost of solving against the
    # identity; it fills only the lower triangle, so mirror it.
    inv, info = dpotri(L, lower=1)
    if info != 0:
        inv = cho_solve((L, True), np.eye(m), check_finite=False)
    else:
        inv = inv + np.tril(inv, -1).T
    grad = np.array(
        [
            0.5 * (alpha @ grads[name] @ alpha - np.sum(inv * grads[name]))
            for name in kernel.hyper_names
        ]
    )
    return float(lml), grad, used_jitter


def lml_and_grad(
    training: TrainingSet, kernel: Kernel, jitter: float = INITIAL_JITTER
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its log-hyperparameter gradient.

    The gradient entries follow ``kernel.hyper_names`` order and use the
    identity ``d LML / d t = 1/2 tr((a a^T - Kj^-1) dK/dt)`` with
    ``a = Kj^-1 y``.
    """
    pairs = kernel.pair_matrix(training.inputs)
    centered = training.targets - training.target_mean
    lml, grad, _ = _evaluate_lml_and_grad(kernel, pairs, centered, jitter)
    return lml, grad


def _warn_on_inconsistent_duplicates(training: TrainingSet) -> None:
    order = np.lexsort((training.inputs[:, 1], training.inputs[:, 0]))
    inp, tgt = training.inputs[order], training.targets[order]
    same = np.all(inp[1:] == inp[:-1], axis=1)
    if np.any(same & (tgt[1:] != tgt[:-1])):
        warnings.warn(
            "identical inputs with conflicting targets; the fit will average them",
            stacklevel=3,
        )


def fit(
    training: TrainingSet, kernel_init: Kernel, config: OptimizerConfig | None = None
) -> GpRegressor:
    """Optimize kernel hyperparameters by Adam ascent on the marginal likelihood.

    The optimizer works on log-hyperparameters, reduces the learning rate by
    ``lr_decay`` after ``plateau_patience`` iterations without improvement,
    and stops at ``max_iters`` or when the learning rate falls below
    ``min_lr``.  The best hyperparameters seen anywhere along the trajectory
    (including the initial ones) are returned.
    """
    cfg = config or OptimizerConfig()
    _warn_on_inconsistent_duplicates(training)
    theta = kernel_init.log_hyperparams()
    if len(theta) == 0:
        return GpRegressor.build(kernel_init, training)

    pairs = kernel_init.pair_matrix(training.inputs)
    centered = training.targets - training.target_mean

    best_theta = theta.copy()
    best_lml = -np.inf
    lr = cfg.initial_lr
    stall = 0
    m_adam = np.zeros_like(theta)
    v_adam = np.zeros_like(theta)

    for iteration in range(1, cfg.max_iters + 1):
        kernel = kernel_init.with_log_hyperparams(theta)
        lml, grad, _ = _evaluate_lml_and_grad(kernel, pairs, centered, INITIAL_JITTER)

        if lml > best_lml + cfg.improvement_tol:
            best_lml = lml
            best_theta = theta.copy()
            stall = 0
        else:
            stall += 1
            if best_lml == -np.inf:
                best_lml, best_theta = lml, theta.copy()
            if stall >= cfg.plateau_patience:
                lr *= cfg.lr_decay
                stall = 0
                if lr < cfg.min_lr:
                    break

        m_adam = cfg.adam_beta1 * m_adam + (1.0 - cfg.adam_beta1) * grad
        v_adam = cfg.adam_beta2 * v_adam + (1.0 - cfg.adam_beta2) * grad**2
        m_hat = m_adam / (1.0 - cfg.adam_beta1**iteration)
        v_hat = v_adam / (1.0 - cfg.adam_beta2**iteration)
        theta = theta + lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

    return GpRegressor.build(kernel_init.with_log_hyperparams(best_theta), training)


def median_pairwise_distance(directions: np.ndarray, distance_mode: str) -> float:
    """Median pairwise feature distance, the default lengthscale heuristic.

    Large inputs are strided down to at most 1000 rows first (deterministic).
    Falls back to 1.0 when there are fewer than two distinct inputs.
    """
    feats = direction_features(directions, distance_mode)
    if len(feats) > 1000:
        feats = feats[:: int(np.ceil(len(feats) / 1000))]
    if len(feats) < 2:
        return 1.0
    med = float(np.median(pdist(feats)))
    return med if med > 0.0 else 1.0


def initial_kernel(template: Kernel, directions: np.ndarray) -> Kernel:
    """Template with the lengthscale replaced by the median-distance heuristic.

    Kernels without a lengthscale are returned unchanged.
    """
    if "lengthscale" not in template.hyper_names:
        return template
    return template.with_hyperparams(
        lengthscale=median_pairwise_distance(directions, template.distance_mode)
    )
