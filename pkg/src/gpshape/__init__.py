"""gpshape: object shape modeling with mixtures of Gaussian process distance fields.

The top-level namespace re-exports the end-to-end workflow: sample a surface
(:mod:`gpshape.geometry`, :mod:`gpshape.meshes`), pick reference points
(:mod:`gpshape.partition`), train per-cluster GP distance fields
(:mod:`gpshape.mixture`), reconstruct and score point clouds
(:mod:`gpshape.metrics`), and persist everything (:mod:`gpshape.io`).
"""

from .geometry import (
    TriangleMesh,
    fibonacci_sphere,
    from_spherical,
    normalize_to_unit_sphere,
    sample_surface,
    to_spherical,
)
from .gp import GpRegressor, OptimizerConfig, TrainingSet, fit, lml_and_grad
from .io import (
    load_mesh,
    load_model,
    load_point_cloud,
    save_model,
    save_ply,
    save_xyz,
)
from .kernels import KERNEL_KINDS, Kernel, make_kernel
from .metrics import MetricsReport, chamfer, evaluate, fscore, precision, recall
from .mixture import (
    Normalization,
    ReconstructedCloud,
    ShapeModel,
    de_normalize,
    point_likelihood,
    point_likelihoods,
    reconstruct,
    train,
)
from .partition import ReferenceSet, em_gmm, kmeans

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh",
    "fibonacci_sphere",
    "normalize_to_unit_sphere",
    "sample_surface",
    "from_spherical",
    "to_spherical",
    "GpRegressor",
    "OptimizerConfig",
    "TrainingSet",
    "fit",
    "lml_and_grad",
    "load_mesh",
    "load_model",
    "load_point_cloud",
    "save_model",
    "save_ply",
    "save_xyz",
    "KERNEL_KINDS",
    "Kernel",
    "make_kernel",
    "MetricsReport",
    "chamfer",
    "evaluate",
    "fscore",
    "precision",
    "recall",
    "Normalization",
    "ReconstructedCloud",
    "ShapeModel",
    "de_normalize",
    "point_likelihood",
    "point_likelihoods",
    "reconstruct",
    "train",
    "ReferenceSet",
    "em_gmm",
    "kmeans",
]
