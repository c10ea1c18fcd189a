"""File formats: point clouds (XYZ/PLY/OBJ), model persistence, run config.

Point clouds move through plain-text XYZ and PLY (ASCII or binary
little-endian).  Meshes load from Wavefront OBJ.  Trained shape models
persist to a small versioned binary container that stores, per cluster,
everything needed to rebuild the regressor exactly: reference point, weight
matrix, kernel description, and the raw training samples.  Run settings load
from flat ``key=value`` text files with CLI-flag overrides.
"""

from __future__ import annotations

import dataclasses
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import TriangleMesh
from .gp import GpRegressor, TrainingSet
from .kernels import (
    BEARING_EUCLIDEAN,
    KERNEL_KINDS,
    PARAM_EUCLIDEAN,
    Matern,
    Polynomial,
)
from .mixture import Normalization, ShapeModel
from .partition import ReferenceSet

MODEL_MAGIC = b"GPSM"
MODEL_VERSION = 1

_KIND_CODES = {kind: i for i, kind in enumerate(sorted(KERNEL_KINDS))}
_CODE_KINDS = {i: kind for kind, i in _KIND_CODES.items()}
_MODE_CODES = {PARAM_EUCLIDEAN: 0, BEARING_EUCLIDEAN: 1}
_CODE_MODES = {i: mode for mode, i in _MODE_CODES.items()}
_SOURCE_CODES = {"kmeans": 0, "em": 1, "manual": 2}
_CODE_SOURCES = {i: s for s, i in _SOURCE_CODES.items()}

_PLY_SCALAR_DTYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


class FileFormatError(ValueError):
    """A file exists but cannot be parsed in its declared format."""


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------


def load_xyz(path):
    """Read an XYZ text file: one ``x y z`` triple per line.

    Blank lines and lines starting with ``#`` are skipped.  Anything else
    must parse as exactly three floats.

    Parameters
    ----------
    path : str or os.PathLike

    Returns
    -------
    ndarray, shape (n, 3)
    """
    points = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FileFormatError(
                    f"{path}: line {lineno}: expected 3 values, got {len(parts)}"
                )
            try:
                points.append([float(p) for p in parts])
            except ValueError:
                raise FileFormatError(
                    f"{path}: line {lineno}: could not parse {line!r} as floats"
                ) from None
    if not points:
        raise FileFormatError(f"{path}: no points found")
    return np.array(points, dtype=float)


def save_xyz(path, points):
    """Write points as an XYZ text file with ~9 significant digits."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
    with open(path, "w") as fh:
        for x, y, z in pts:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def _parse_ply_header(fh, path):
    """Consume the PLY header, returning (fmt, elements).

    ``elements`` is a list of ``(name, count, properties)`` in file order,
    where ``properties`` is a list of ``(name, dtype_code)`` or raises for
    list properties we do not support.
    """

    def next_line():
        raw = fh.readline()
        if not raw:
            raise FileFormatError(f"{path}: unexpected end of file in header")
        return raw.decode("ascii", errors="replace").strip()

    if next_line() != "ply":
        raise FileFormatError(f"{path}: missing 'ply' magic line")
    fmt = None
    elements = []
    while True:
        line = next_line()
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in (
                "ascii",
                "binary_little_endian",
                "binary_big_endian",
            ):
                raise FileFormatError(f"{path}: malformed format line {line!r}")
            if parts[1] == "binary_big_endian":
                raise FileFormatError(f"{path}: big-endian PLY is not supported")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise FileFormatError(f"{path}: malformed element line {line!r}")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FileFormatError(f"{path}: property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            else:
                if parts[1] not in _PLY_SCALAR_DTYPES:
                    raise FileFormatError(f"{path}: unknown property type {parts[1]!r}")
                elements[-1][2].append((parts[2], _PLY_SCALAR_DTYPES[parts[1]]))
    if fmt is None:
        raise FileFormatError(f"{path}: header has no format line")
    return fmt, elements


def load_ply(path):
    """Read vertex positions from an ASCII or binary little-endian PLY file.

    The vertex element must come first; extra scalar vertex properties
    (colors, per-point values) are ignored.  Later elements (faces, edges)
    are not read.

    Returns
    -------
    ndarray, shape (n, 3)
    """
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        if not elements or elements[0][0] != "vertex":
            raise FileFormatError(f"{path}: expected 'vertex' as the first element")
        _, count, props = elements[0]
        if count < 1:
            raise FileFormatError(f"{path}: empty vertex element")
        names = [name for name, _ in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise FileFormatError(f"{path}: vertex element lacks property {needed!r}")
        if any(code == "list" for _, code in props):
            raise FileFormatError(f"{path}: list-typed vertex properties are not supported")
        if fmt == "ascii":
            rows = []
            for i in range(count):
                raw = fh.readline()
                if not raw:
                    raise FileFormatError(f"{path}: vertex data ends after {i} of {count}")
                fields = raw.split()
                if len(fields) != len(props):
                    raise FileFormatError(
                        f"{path}: vertex {i}: expected {len(props)} values, got {len(fields)}"
                    )
                rows.append([float(v) for v in fields])
            table = np.array(rows, dtype=float)
            return table[:, [names.index(c) for c in "xyz"]]
        dtype = np.dtype([(name, "<" + code) for name, code in props])
        raw = fh.read(dtype.itemsize * count)
        if len(raw) < dtype.itemsize * count:
            raise FileFormatError(f"{path}: truncated vertex data")
        table = np.frombuffer(raw, dtype=dtype)
        return np.column_stack([table["x"], table["y"], table["z"]]).astype(float)


def save_ply(path, points):
    """Write points as a binary little-endian PLY with double precision."""
    pts = np.asarray(points, dtype="<f8")
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(pts).tobytes())


def save_heatmap_ply(path, points, values):
    """Write a colored point cloud: one color + raw value per point.

    Values map linearly onto the viridis colormap (0 → dark, max → bright),
    and are also stored verbatim in a float ``error`` property so viewers
    and scripts can recover them.
    """
    pts = np.asarray(points, dtype=float)
    vals = np.asarray(values, dtype=float).ravel()
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
    if len(vals) != len(pts):
        raise ValueError("one value per point required")
    if len(pts) == 0:
        raise ValueError("empty point cloud")

    from matplotlib import colormaps  # deferred: only needed for colored output

    top = vals.max()
    normalized = vals / top if top > 0 else np.zeros_like(vals)
    rgb = (np.asarray(colormaps["viridis"](normalized))[:, :3] * 255).astype(np.uint8)

    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "property float error\n"
        "end_header\n"
    )
    record = np.zeros(
        len(pts),
        dtype=[
            ("x", "<f4"),
            ("y", "<f4"),
            ("z", "<f4"),
            ("red", "u1"),
            ("green", "u1"),
            ("blue", "u1"),
            ("error", "<f4"),
        ],
    )
    record["x"], record["y"], record["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    record["red"], record["green"], record["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    record["error"] = vals
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(record.tobytes())


def load_obj_vertices(path):
    """Read only the ``v`` lines of a Wavefront OBJ file."""
    vertices = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0] != "v":
                continue
            if len(parts) < 4:
                raise FileFormatError(
                    f"{path}: line {lineno}: vertex needs at least 3 coordinates"
                )
            try:
                vertices.append([float(v) for v in parts[1:4]])
            except ValueError:
                raise FileFormatError(
                    f"{path}: line {lineno}: could not parse vertex coordinates"
                ) from None
    if not vertices:
        raise FileFormatError(f"{path}: no vertices found")
    return np.array(vertices, dtype=float)


def load_mesh(path):
    """Read a triangle mesh from a Wavefront OBJ file.

    Supports 1-based and negative (relative) vertex indices and fan-
    triangulates polygonal faces.  Texture/normal references after ``/``
    are ignored.

    Returns
    -------
    TriangleMesh
    """
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FileFormatError(
                        f"{path}: line {lineno}: vertex needs at least 3 coordinates"
                    )
                try:
                    vertices.append([float(v) for v in parts[1:4]])
                except ValueError:
                    raise FileFormatError(
                        f"{path}: line {lineno}: could not parse vertex coordinates"
                    ) from None
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise FileFormatError(
                        f"{path}: line {lineno}: face needs at least 3 vertices"
                    )
                idx = []
                for token in parts[1:]:
                    ref = token.split("/")[0]
                    try:
                        i = int(ref)
                    except ValueError:
                        raise FileFormatError(
                            f"{path}: line {lineno}: bad vertex reference {token!r}"
                        ) from None
                    if i == 0:
                        raise FileFormatError(
                            f"{path}: line {lineno}: OBJ indices are 1-based, got 0"
                        )
                    # Negative references count back from the vertices seen so far.
                    resolved = len(vertices) + i if i < 0 else i - 1
                    if not 0 <= resolved < len(vertices):
                        raise FileFormatError(
                            f"{path}: line {lineno}: vertex reference {i} out of range"
                        )
                    idx.append(resolved)
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    if not vertices:
        raise FileFormatError(f"{path}: no vertices found")
    if not faces:
        raise FileFormatError(f"{path}: no faces found")
    return TriangleMesh.from_arrays(np.array(vertices, dtype=float), np.array(faces))


def load_point_cloud(path):
    """Read a point cloud, dispatching on the file extension.

    ``.xyz`` → `load_xyz`, ``.ply`` → `load_ply`, ``.obj`` → vertices only.
    """
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".xyz":
        return load_xyz(path)
    if ext == ".ply":
        return load_ply(path)
    if ext == ".obj":
        return load_obj_vertices(path)
    raise FileFormatError(f"{path}: unknown point cloud extension {ext!r}")


def subsample(points, n, seed=None):
    """Draw ``n`` points uniformly without replacement.

    Parameters
    ----------
    points : array_like, shape (N, 3)
    n : int
        Sample size; must not exceed ``N``.
    seed : int or None
    """
    pts = np.asarray(points, dtype=float)
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    if n > len(pts):
        raise ValueError(f"cannot sample {n} from {len(pts)} points")
    rng = np.random.default_rng(seed)
    return pts[rng.permutation(len(pts))[:n]]


def disjoint_subsample(points, n_a, n_b, seed=None):
    """Draw two disjoint subsets of sizes ``n_a`` and ``n_b``.

    One permutation is sliced twice, so the two index sets never overlap.
    """
    pts = np.asarray(points, dtype=float)
    if n_a < 1 or n_b < 1:
        raise ValueError("sample sizes must be positive")
    if n_a + n_b > len(pts):
        raise ValueError(
            f"cannot draw disjoint samples of {n_a} + {n_b} from {len(pts)} points"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    return pts[order[:n_a]], pts[order[n_a : n_a + n_b]]


# ---------------------------------------------------------------------------
# normalization sidecar
# ---------------------------------------------------------------------------


def save_normalization(path, center, scale):
    """Write the unit-sphere normalization transform as a small text file."""
    center = np.asarray(center, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"center {center[0]:.17g} {center[1]:.17g} {center[2]:.17g}\n")
        fh.write(f"scale {scale:.17g}\n")


def load_normalization(path):
    """Read a normalization sidecar; returns ``(center, scale)``."""
    center = None
    scale = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "center" and len(parts) == 4:
                center = np.array([float(v) for v in parts[1:]])
            elif parts[0] == "scale" and len(parts) == 2:
                scale = float(parts[1])
            else:
                raise FileFormatError(f"{path}: line {lineno}: unrecognized entry")
    if center is None or scale is None:
        raise FileFormatError(f"{path}: missing center or scale entry")
    return center, scale


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def _kernel_fixed_param(kernel):
    """The one non-optimized structural parameter some kernels carry."""
    if isinstance(kernel, Matern):
        return float(kernel.nu)
    if isinstance(kernel, Polynomial):
        return float(kernel.degree)
    return 0.0


def _rebuild_kernel(kind, mode, fixed, log_hypers):
    cls = KERNEL_KINDS[kind]
    if cls is Matern:
        kernel = cls(distance_mode=mode, nu=fixed)
    elif cls is Polynomial:
        kernel = cls(distance_mode=mode, degree=int(fixed))
    else:
        kernel = cls(distance_mode=mode)
    return kernel.with_log_hyperparams(np.asarray(log_hypers))


def save_model(path, model):
    """Persist a ShapeModel to a versioned little-endian binary file.

    Stores the normalization transform, reference points with weight
    matrices, and per cluster the kernel description plus the raw training
    samples and jitter.  Loading rebuilds each regressor with a fresh
    factorization; predictions agree with the original to ~1e-12.
    """
    if not isinstance(model, ShapeModel):
        raise TypeError("save_model expects a ShapeModel")
    chunks = [MODEL_MAGIC, struct.pack("<I", MODEL_VERSION)]
    norm = model.normalization
    chunks.append(np.asarray(norm.center, dtype="<f8").tobytes())
    chunks.append(struct.pack("<d", float(norm.scale)))
    chunks.append(struct.pack("<IB", model.n_clusters, _SOURCE_CODES[model.refs.source]))
    for k in range(model.n_clusters):
        reg = model.regressors[k]
        chunks.append(np.asarray(model.refs.centers[k], dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(model.refs.weight_matrices[k], dtype="<f8").tobytes())
        chunks.append(
            struct.pack(
                "<BBd",
                _KIND_CODES[reg.kernel.kind],
                _MODE_CODES[reg.kernel.distance_mode],
                _kernel_fixed_param(reg.kernel),
            )
        )
        log_hypers = np.asarray(reg.kernel.log_hyperparams(), dtype="<f8")
        chunks.append(struct.pack("<I", len(log_hypers)))
        chunks.append(log_hypers.tobytes())
        training = reg.training
        chunks.append(struct.pack("<I", len(training)))
        chunks.append(np.ascontiguousarray(training.inputs, dtype="<f8").tobytes())
        chunks.append(np.asarray(training.targets, dtype="<f8").tobytes())
        chunks.append(struct.pack("<dd", training.target_mean, reg.jitter))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Cursor:
    """Sequential reader over a byte buffer with truncation checks."""

    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.data):
            raise FileFormatError(f"{self.path}: truncated model file")
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)


def load_model(path):
    """Load a ShapeModel saved by `save_model`.

    Each regressor's Cholesky factorization is recomputed from the stored
    training data at the stored jitter.

    Returns
    -------
    ShapeModel
    """
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data, path)
    if cur.take(4) != MODEL_MAGIC:
        raise FileFormatError(f"{path}: not a model file (bad magic)")
    (version,) = cur.unpack("<I")
    if version != MODEL_VERSION:
        raise FileFormatError(
            f"{path}: unsupported model file version {version} (expected {MODEL_VERSION})"
        )
    center = cur.floats(3)
    (scale,) = cur.unpack("<d")
    n_clusters, source_code = cur.unpack("<IB")
    if n_clusters < 1:
        raise FileFormatError(f"{path}: model file declares no clusters")
    if source_code not in _CODE_SOURCES:
        raise FileFormatError(f"{path}: unknown reference source code {source_code}")
    centers = np.empty((n_clusters, 3))
    weights = np.empty((n_clusters, 3, 3))
    regressors = []
    for k in range(n_clusters):
        centers[k] = cur.floats(3)
        weights[k] = cur.floats(9).reshape(3, 3)
        kind_code, mode_code, fixed = cur.unpack("<BBd")
        if kind_code not in _CODE_KINDS:
            raise FileFormatError(f"{path}: unknown kernel kind code {kind_code}")
        if mode_code not in _CODE_MODES:
            raise FileFormatError(f"{path}: unknown distance mode code {mode_code}")
        (n_hypers,) = cur.unpack("<I")
        log_hypers = cur.floats(n_hypers)
        kernel = _rebuild_kernel(
            _CODE_KINDS[kind_code], _CODE_MODES[mode_code], fixed, log_hypers
        )
        (m,) = cur.unpack("<I")
        if m < 1:
            raise FileFormatError(f"{path}: cluster {k} has no training samples")
        inputs = cur.floats(2 * m).reshape(m, 2)
        targets = cur.floats(m)
        target_mean, jitter = cur.unpack("<dd")
        training = TrainingSet(inputs=inputs, targets=targets, target_mean=target_mean)
        regressors.append(GpRegressor.build(kernel, training, jitter=jitter))
    if cur.offset != len(data):
        raise FileFormatError(f"{path}: {len(data) - cur.offset} trailing bytes")
    refs = ReferenceSet(
        centers=centers, weight_matrices=weights, source=_CODE_SOURCES[source_code]
    )
    return ShapeModel(
        refs=refs,
        regressors=regressors,
        normalization=Normalization(center=center, scale=float(scale)),
    )


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Settings for a train/evaluate run.

    Loadable from a flat ``key=value`` file; CLI flags override file values.
    ``kernel_params`` holds per-kernel hyperparameter overrides written as
    ``kernel.<name>`` keys (e.g. ``kernel.lengthscale = 0.5``).
    """

    kernel: str = "rq"
    distance_mode: str = PARAM_EUCLIDEAN
    k: int = 8
    clustering: str = "kmeans"
    centers: str | None = None
    overlap: float = 0.15
    seed: int = 0
    train_size: int = 10_000
    test_size: int = 30_000
    queries: int = 30_000
    tau: float = 0.01
    max_iters: int = 200
    initial_lr: float = 0.1
    auto_lengthscale: bool = True
    kernel_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kernel not in KERNEL_KINDS:
            raise ValueError(
                f"unknown kernel {self.kernel!r}; expected one of {sorted(KERNEL_KINDS)}"
            )
        if self.distance_mode not in _MODE_CODES:
            raise ValueError(f"unknown distance_mode {self.distance_mode!r}")
        if self.clustering not in ("kmeans", "em", "manual"):
            raise ValueError(f"clustering must be kmeans, em, or manual, got {self.clustering!r}")
        if self.clustering == "manual" and not self.centers:
            raise ValueError("manual clustering requires a centers file")
        for label, value in (
            ("k", self.k),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("queries", self.queries),
            ("max_iters", self.max_iters),
        ):
            if int(value) < 1:
                raise ValueError(f"{label} must be positive, got {value}")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.tau <= 0 or self.initial_lr <= 0:
            raise ValueError("tau and initial_lr must be positive")


_CONFIG_INT_KEYS = {"k", "seed", "train_size", "test_size", "queries", "max_iters"}
_CONFIG_FLOAT_KEYS = {"overlap", "tau", "initial_lr"}
_CONFIG_BOOL_KEYS = {"auto_lengthscale"}
_CONFIG_STR_KEYS = {"kernel", "distance_mode", "clustering", "centers"}


def _parse_config_value(key, value, path, lineno):
    try:
        if key in _CONFIG_INT_KEYS:
            return int(value)
        if key in _CONFIG_FLOAT_KEYS:
            return float(value)
        if key in _CONFIG_BOOL_KEYS:
            lowered = value.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return value
    except ValueError:
        raise FileFormatError(
            f"{path}: line {lineno}: bad value {value!r} for key {key!r}"
        ) from None


def load_run_config(path):
    """Parse a ``key = value`` config file into a RunConfig.

    ``#`` starts a comment; blank lines are skipped; unknown keys are
    errors.  Keys of the form ``kernel.<name>`` collect into
    ``kernel_params``.  A manual-clustering centers file must exist at
    load time.
    """
    known = _CONFIG_INT_KEYS | _CONFIG_FLOAT_KEYS | _CONFIG_BOOL_KEYS | _CONFIG_STR_KEYS
    values = {}
    params = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FileFormatError(f"{path}: line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key.startswith("kernel."):
                name = key[len("kernel.") :]
                try:
                    params[name] = float(value)
                except ValueError:
                    raise FileFormatError(
                        f"{path}: line {lineno}: bad value {value!r} for key {key!r}"
                    ) from None
                continue
            if key not in known:
                raise FileFormatError(f"{path}: line {lineno}: unknown key {key!r}")
            values[key] = _parse_config_value(key, value, path, lineno)
    try:
        config = RunConfig(kernel_params=params, **values)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None
    if config.clustering == "manual" and not os.path.exists(config.centers):
        raise FileFormatError(f"{path}: centers file {config.centers!r} does not exist")
    return config


def apply_overrides(config, **overrides):
    """Return a copy of ``config`` with non-None overrides applied."""
    updates = {key: value for key, value in overrides.items() if value is not None}
    return dataclasses.replace(config, **updates) if updates else config
