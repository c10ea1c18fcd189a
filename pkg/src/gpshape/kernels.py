"""Covariance kernels over spherical direction parameters.

Kernels operate on directions ``psi = (phi, theta)``.  Two input metrics are
supported: ``param_euclidean`` compares raw parameter vectors with the plain
Euclidean distance, while ``bearing_euclidean`` first maps each direction to
its 3D unit bearing vector and compares those (the chordal distance).  The
geodesic (great-circle) distance is deliberately not offered: plugging it
into these radial forms does not yield a positive semi-definite covariance.

Kernel objects are immutable; hyperparameter updates produce new instances.
Gradients are taken with respect to the *logarithm* of each continuous
hyperparameter, which is the space the optimizer works in.
"""

from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import bearing

PARAM_EUCLIDEAN = "param_euclidean"
BEARING_EUCLIDEAN = "bearing_euclidean"
DISTANCE_MODES = (PARAM_EUCLIDEAN, BEARING_EUCLIDEAN)


def direction_features(directions: np.ndarray, distance_mode: str) -> np.ndarray:
    """Map (N, 2) directions to the feature space the kernel compares in."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    if distance_mode == PARAM_EUCLIDEAN:
        return dirs
    if distance_mode == BEARING_EUCLIDEAN:
        return bearing(dirs)
    raise ValueError(f"unknown distance mode: {distance_mode!r}")


def input_distance(a: np.ndarray, b: np.ndarray, distance_mode: str) -> float:
    """Distance between two single directions under the given mode.

    Note that ``param_euclidean`` treats the parameter rectangle as flat:
    directions that are physically close across the azimuth wrap or meet at
    a pole can be far apart in parameter space.  ``bearing_euclidean`` is
    free of such seams.
    """
    fa = direction_features(a, distance_mode)
    fb = direction_features(b, distance_mode)
    return float(np.linalg.norm(fa[0] - fb[0]))


@dataclass(frozen=True)
class Kernel(ABC):
    """Base class for covariance kernels on direction parameters.

    Subclasses declare ``kind`` (a short identifier), ``hyper_names`` (the
    continuous hyperparameters, all strictly positive) and ``uses_distance``
    (whether the pair statistic is the feature-space distance matrix or the
    feature dot-product matrix).
    """

    distance_mode: str = PARAM_EUCLIDEAN

    kind: ClassVar[str]
    hyper_names: ClassVar[tuple[str, ...]]
    uses_distance: ClassVar[bool]

    def __post_init__(self) -> None:
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(f"unknown distance mode: {self.distance_mode!r}")
        for name in self.hyper_names:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"hyperparameter {name!r} must be positive and finite")

    # ----- pair statistics ------------------------------------------------

    def pair_matrix(self, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
        """Pair statistic between direction sets.

        For stationary kernels this is the feature-space Euclidean distance
        matrix; for dot-product kernels it is the feature Gram matrix.  The
        statistic depends only on the inputs and the distance mode, not on
        the hyperparameters, so callers that repeatedly re-evaluate the same
        inputs under different hyperparameters can cache it.
        """
        fa = direction_features(a, self.distance_mode)
        fb = fa if b is None else direction_features(b, self.distance_mode)
        if self.uses_distance:
            return cdist(fa, fb)
        return fa @ fb.T

    # ----- covariance evaluation -------------------------------------------

    @abstractmethod
    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        """Covariance matrix from a precomputed pair statistic."""

    @abstractmethod
    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        """Per-hyperparameter matrices ``dK / d log(hyper)`` from pair stats."""

    def value_and_grads_from_pairs(
        self, pairs: np.ndarray
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Covariance and gradients together.

        Subclasses whose value and gradients share expensive intermediates
        (exponentials, logs) override this; the default just calls both.
        """
        return self.value_from_pairs(pairs), self.grads_from_pairs(pairs)

    def __call__(self, a: np.ndarray, b: np.ndarray | None = None):
        """Covariance between direction sets (or two single directions).

        Returns a matrix for array inputs; when both arguments are single
        directions of shape (2,), returns a scalar.
        """
        scalar = np.asarray(a).ndim == 1 and (b is None or np.asarray(b).ndim == 1)
        value = self.value_from_pairs(self.pair_matrix(a, b))
        return float(value[0, 0]) if scalar else value

    def gram(self, directions: np.ndarray) -> np.ndarray:
        """Symmetric covariance matrix of a direction set against itself."""
        return self.value_from_pairs(self.pair_matrix(directions))

    def diag(self, directions: np.ndarray) -> np.ndarray:
        """Per-direction prior variances ``k(x, x)`` without the full Gram."""
        feats = direction_features(directions, self.distance_mode)
        if self.uses_distance:
            pairs = np.zeros(len(feats))
        else:
            pairs = np.einsum("ij,ij->i", feats, feats)
        return self.value_from_pairs(pairs)

    def grad_log_hyperparams(self, directions: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of the Gram matrix w.r.t. each log-hyperparameter."""
        return self.grads_from_pairs(self.pair_matrix(directions))

    # ----- hyperparameter plumbing -------------------------------------------

    def hyperparams(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in self.hyper_names}

    def log_hyperparams(self) -> np.ndarray:
        return np.log([getattr(self, name) for name in self.hyper_names])

    def with_hyperparams(self, **updates: float) -> "Kernel":
        unknown = set(updates) - set(self.hyper_names)
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return dataclasses.replace(self, **updates)

    def with_log_hyperparams(self, log_values: np.ndarray) -> "Kernel":
        log_values = np.asarray(log_values, dtype=float)
        if log_values.shape != (len(self.hyper_names),):
            raise ValueError("log-hyperparameter vector has the wrong length")
        return self.with_hyperparams(
            **{name: float(np.exp(v)) for name, v in zip(self.hyper_names, log_values)}
        )


@dataclass(frozen=True)
class RationalQuadratic(Kernel):
    """k(d) = (1 + d^2 / (2 * alpha * l^2)) ** -alpha

    A scale mixture of squared exponentials; recovers the RBF kernel as
    ``alpha -> inf``.
    """

    lengthscale: float = 1.0
    alpha: float = 1.0

    kind: ClassVar[str] = "rq"
    hyper_names: ClassVar[tuple[str, ...]] = ("lengthscale", "alpha")
    uses_distance: ClassVar[bool] = True

    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        base = 1.0 + pairs**2 / (2.0 * self.alpha * self.lengthscale**2)
        return np.exp(-self.alpha * np.log(base))

    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        return self.value_and_grads_from_pairs(pairs)[1]

    def value_and_grads_from_pairs(
        self, pairs: np.ndarray
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        l, al = self.lengthscale, self.alpha
        sq = pairs**2
        base = 1.0 + sq / (2.0 * al * l**2)
        log_base = np.log(base)
        value = np.exp(-al * log_base)
        d_lengthscale = value / base * (sq / l**2)
        d_alpha = al * value * ((base - 1.0) / base - log_base)
        return value, {"lengthscale": d_lengthscale, "alpha": d_alpha}


@dataclass(frozen=True)
class RBF(Kernel):
    """k(d) = exp(-d^2 / (2 * l^2))"""

    lengthscale: float = 1.0

    kind: ClassVar[str] = "rbf"
    hyper_names: ClassVar[tuple[str, ...]] = ("lengthscale",)
    uses_distance: ClassVar[bool] = True

    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        return np.exp(-(pairs**2) / (2.0 * self.lengthscale**2))

    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        return self.value_and_grads_from_pairs(pairs)[1]

    def value_and_grads_from_pairs(
        self, pairs: np.ndarray
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        scaled = pairs**2 / self.lengthscale**2
        value = np.exp(-0.5 * scaled)
        return value, {"lengthscale": value * scaled}


@dataclass(frozen=True)
class Matern(Kernel):
    """Matern kernel with smoothness nu in {0.5, 1.5, 2.5} (nu is fixed).

    nu = 0.5: exp(-d/l)
    nu = 1.5: (1 + sqrt(3) d/l) exp(-sqrt(3) d/l)
    nu = 2.5: (1 + sqrt(5) d/l + 5 d^2/(3 l^2)) exp(-sqrt(5) d/l)
    """

    lengthscale: float = 1.0
    nu: float = 2.5

    kind: ClassVar[str] = "matern"
    hyper_names: ClassVar[tuple[str, ...]] = ("lengthscale",)
    uses_distance: ClassVar[bool] = True

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.nu not in (0.5, 1.5, 2.5):
            raise ValueError("nu must be one of 0.5, 1.5, 2.5")

    def _scaled(self, pairs: np.ndarray) -> np.ndarray:
        root = {0.5: 1.0, 1.5: np.sqrt(3.0), 2.5: np.sqrt(5.0)}[self.nu]
        return root * pairs / self.lengthscale

    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        s = self._scaled(pairs)
        if self.nu == 0.5:
            poly = 1.0
        elif self.nu == 1.5:
            poly = 1.0 + s
        else:
            poly = 1.0 + s + s**2 / 3.0
        return poly * np.exp(-s)

    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        return self.value_and_grads_from_pairs(pairs)[1]

    def value_and_grads_from_pairs(
        self, pairs: np.ndarray
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        s = self._scaled(pairs)
        decay = np.exp(-s)
        if self.nu == 0.5:
            value = decay
            grad = s * decay
        elif self.nu == 1.5:
            value = (1.0 + s) * decay
            grad = s**2 * decay
        else:
            value = (1.0 + s + s**2 / 3.0) * decay
            grad = (s**2 / 3.0) * (1.0 + s) * decay
        return value, {"lengthscale": grad}


@dataclass(frozen=True)
class Periodic(Kernel):
    """k(d) = exp(-2 * sin^2(pi * d / period) / l^2)

    The default period of ``4*pi`` keeps the sine argument within its first
    half-period over the whole parameter rectangle, which keeps the Gram
    matrix numerically positive semi-definite; short periods relative to the
    input spread do not.
    """

    lengthscale: float = 1.0
    period: float = 4.0 * np.pi

    kind: ClassVar[str] = "periodic"
    hyper_names: ClassVar[tuple[str, ...]] = ("lengthscale", "period")
    uses_distance: ClassVar[bool] = True

    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        sin2 = np.sin(np.pi * pairs / self.period) ** 2
        return np.exp(-2.0 * sin2 / self.lengthscale**2)

    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        return self.value_and_grads_from_pairs(pairs)[1]

    def value_and_grads_from_pairs(
        self, pairs: np.ndarray
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        l, p = self.lengthscale, self.period
        arg = np.pi * pairs / p
        sin_arg = np.sin(arg)
        sin2 = sin_arg**2
        value = np.exp(-2.0 * sin2 / l**2)
        d_lengthscale = value * 4.0 * sin2 / l**2
        d_period = value * (4.0 * arg / l**2) * sin_arg * np.cos(arg)
        return value, {"lengthscale": d_lengthscale, "period": d_period}


@dataclass(frozen=True)
class Linear(Kernel):
    """k(a, b) = variance * <f(a), f(b)> on the mode's feature vectors."""

    variance: float = 1.0

    kind: ClassVar[str] = "linear"
    hyper_names: ClassVar[tuple[str, ...]] = ("variance",)
    uses_distance: ClassVar[bool] = False

    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        return self.variance * pairs

    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        return {"variance": self.variance * pairs}


@dataclass(frozen=True)
class Polynomial(Kernel):
    """k(a, b) = (<f(a), f(b)> + offset) ** degree with a fixed degree."""

    offset: float = 1.0
    degree: int = 3

    kind: ClassVar[str] = "polynomial"
    hyper_names: ClassVar[tuple[str, ...]] = ("offset",)
    uses_distance: ClassVar[bool] = False

    def __post_init__(self) -> None:
        super().__post_init__()
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError("degree must be a positive integer")

    def value_from_pairs(self, pairs: np.ndarray) -> np.ndarray:
        return (pairs + self.offset) ** self.degree

    def grads_from_pairs(self, pairs: np.ndarray) -> dict[str, np.ndarray]:
        grad = self.degree * self.offset * (pairs + self.offset) ** (self.degree - 1)
        return {"offset": grad}


KERNEL_KINDS: dict[str, type[Kernel]] = {
    cls.kind: cls
    for cls in (RationalQuadratic, RBF, Matern, Periodic, Linear, Polynomial)
}


def make_kernel(kind: str, distance_mode: str = PARAM_EUCLIDEAN, **params) -> Kernel:
    """Construct a kernel by its ``kind`` identifier."""
    try:
        cls = KERNEL_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown kernel kind {kind!r}; expected one of {sorted(KERNEL_KINDS)}"
        ) from None
    return cls(distance_mode=distance_mode, **params)
