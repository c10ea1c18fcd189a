"""Spherical shape geometry: directional parametrization, mesh raycasting and
surface sampling.

Points on a surface are described relative to a reference point ``C`` by a
direction ``psi = (phi, theta)`` and a radial distance ``d`` so that
``P = d * u(phi, theta) + C`` with ``u`` the unit bearing vector.  ``phi`` is
the polar angle measured from the +z axis (``0 <= phi <= pi``) and ``theta``
the azimuth measured from the +x axis (``0 <= theta < 2*pi``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Minimum ray-hit distance; intersections closer than this are treated as the
# ray leaving its own origin and discarded.
RAY_EPS = 1e-9

# Grid resolution used when merging near-identical 3D points or directions.
DEDUP_TOL = 1e-9

TWO_PI = 2.0 * np.pi

GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass
class TriangleMesh:
    """Indexed triangle soup.

    Attributes
    ----------
    vertices : ndarray, shape (V, 3)
        Vertex positions.
    faces : ndarray, shape (F, 3)
        Integer vertex indices, one row per triangle.
    """

    vertices: np.ndarray
    faces: np.ndarray

    @classmethod
    def from_arrays(cls, vertices: np.ndarray, faces: np.ndarray) -> "TriangleMesh":
        """Build a mesh, validating indices and dropping degenerate triangles.

        Triangles whose two edge vectors are (numerically) parallel carry no
        area and can never be hit, so they are filtered out here once instead
        of being special-cased in every intersection query.
        """
        vertices = np.asarray(vertices, dtype=float)
        faces = np.asarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must have shape (F, 3)")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("vertices must be finite")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError("face indices out of range")
        if faces.size:
            e1 = vertices[faces[:, 1]] - vertices[faces[:, 0]]
            e2 = vertices[faces[:, 2]] - vertices[faces[:, 0]]
            area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
            faces = faces[area2 > 1e-14]
        return cls(vertices=vertices, faces=faces)

    @property
    def n_faces(self) -> int:
        return len(self.faces)


def to_spherical(points: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Express points as directions and distances relative to ``center``.

    Parameters
    ----------
    points : ndarray, shape (3,) or (N, 3)
        Query points; must not coincide with ``center``.
    center : ndarray, shape (3,)
        Reference point.

    Returns
    -------
    directions : ndarray, shape (N, 2)
        Rows ``(phi, theta)`` with ``phi`` in ``[0, pi]`` and ``theta`` in
        ``[0, 2*pi)``.  At the poles (``sin(phi) == 0``) the azimuth is
        degenerate and canonicalized to ``theta = 0``.
    distances : ndarray, shape (N,)
        Euclidean distances from ``center``, strictly positive.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    center = np.asarray(center, dtype=float)
    rel = pts - center
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist == 0.0):
        raise ValueError("point coincides with the reference point; direction undefined")
    unit = rel / dist[:, None]
    phi = np.arccos(np.clip(unit[:, 2], -1.0, 1.0))
    theta = np.arctan2(unit[:, 1], unit[:, 0]) % TWO_PI
    # Rounding in the modulo can land exactly on 2*pi; that direction is 0.
    theta[theta >= TWO_PI] = 0.0
    at_pole = (unit[:, 0] == 0.0) & (unit[:, 1] == 0.0)
    theta[at_pole] = 0.0
    return np.column_stack([phi, theta]), dist


def bearing(directions: np.ndarray) -> np.ndarray:
    """Unit vectors ``u(phi, theta)`` for an (N, 2) array of directions."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    phi, theta = dirs[:, 0], dirs[:, 1]
    sin_phi = np.sin(phi)
    return np.column_stack([sin_phi * np.cos(theta), sin_phi * np.sin(theta), np.cos(phi)])


def from_spherical(
    directions: np.ndarray, distances: np.ndarray | float, center: np.ndarray
) -> np.ndarray:
    """Invert :func:`to_spherical`: ``P = d * u(phi, theta) + C``.

    Returns an (N, 3) array of points.
    """
    u = bearing(directions)
    d = np.atleast_1d(np.asarray(distances, dtype=float))
    return d[:, None] * u + np.asarray(center, dtype=float)


def normalize_to_unit_sphere(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Center a cloud on its bounding-box centroid and scale it into the unit ball.

    Parameters
    ----------
    points : ndarray, shape (N, 3)

    Returns
    -------
    normalized : ndarray, shape (N, 3)
        ``(points - center) / scale``; every norm is <= 1 and the maximum
        norm is exactly 1.
    center : ndarray, shape (3,)
        Centroid of the axis-aligned bounding box.
    scale : float
        Maximum distance from ``center`` over the input points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError("expected a non-empty (N, 3) point array")
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    rel = pts - center
    scale = float(np.linalg.norm(rel, axis=1).max())
    if scale == 0.0:
        raise ValueError("all points are identical; cannot normalize")
    return rel / scale, center, scale


def fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform unit-sphere directions on the Fibonacci lattice.

    Point ``i`` sits at height ``z_i = 1 - (2*i + 1)/n`` with azimuth
    ``2*pi*i*(1 - 1/golden_ratio)``.

    Parameters
    ----------
    n : int
        Number of directions, >= 1.

    Returns
    -------
    ndarray, shape (n, 3)
        Unit vectors.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    azimuth = TWO_PI * i * (1.0 - 1.0 / GOLDEN_RATIO)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(azimuth), r * np.sin(azimuth), z])


def _raycast_chunk(
    mesh: TriangleMesh, origins: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    """Moeller-Trumbore intersection of R rays against all triangles.

    Returns the (R,) array of first-hit distances, ``inf`` where a ray
    misses every triangle.
    """
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0

    # rays axis 0, triangles axis 1
    h = np.cross(directions[:, None, :], e2[None, :, :])
    a = np.einsum("tj,rtj->rt", e1, h)
    parallel = np.abs(a) < 1e-12
    a = np.where(parallel, 1.0, a)
    f = 1.0 / a
    s = origins[:, None, :] - v0[None, :, :]
    u = f * np.einsum("rtj,rtj->rt", s, h)
    q = np.cross(s, e1[None, :, :])
    v = f * np.einsum("rj,rtj->rt", directions, q)
    t = f * np.einsum("tj,rtj->rt", e2, q)
    valid = (
        ~parallel
        & (u >= 0.0)
        & (u <= 1.0)
        & (v >= 0.0)
        & (u + v <= 1.0)
        & (t > RAY_EPS)
    )
    t = np.where(valid, t, np.inf)
    return t.min(axis=1)


def raycast_first_hit(
    mesh: TriangleMesh, origin: np.ndarray, direction: np.ndarray
) -> tuple[np.ndarray, float] | None:
    """First intersection of a single ray with a mesh.

    Parameters
    ----------
    mesh : TriangleMesh
    origin : ndarray, shape (3,)
    direction : ndarray, shape (3,)
        Need not be normalized; the returned distance is measured in units
        of its length.

    Returns
    -------
    (point, distance) or None
        Hit point and distance of the nearest intersection with
        ``distance > 1e-9``, or ``None`` when the ray misses.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if mesh.n_faces == 0:
        return None
    t = _raycast_chunk(mesh, origin[None, :], direction[None, :])[0]
    if not np.isfinite(t):
        return None
    return origin + t * direction, float(t)


def raycast_batch(
    mesh: TriangleMesh,
    origins: np.ndarray,
    directions: np.ndarray,
    chunk_size: int = 1024,
) -> np.ndarray:
    """First-hit distances for many rays; ``inf`` marks misses.

    The rays-by-triangles intersection test is evaluated in chunks to bound
    peak memory.
    """
    origins = np.asarray(origins, dtype=float)
    directions = np.asarray(directions, dtype=float)
    n = len(origins)
    if mesh.n_faces == 0:
        return np.full(n, np.inf)
    # Keep the rays-by-triangles work arrays around a few million entries.
    chunk = max(1, min(chunk_size, int(4_000_000 / max(1, mesh.n_faces))))
    out = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        out[lo:hi] = _raycast_chunk(mesh, origins[lo:hi], directions[lo:hi])
    return out


def dedup_points(points: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    """Merge points that fall into the same ``tol``-sized grid cell.

    The input is sorted before deduplication so the result does not depend
    on the order rays happened to hit the surface.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return pts.reshape(0, 3)
    keys = np.round(pts / tol).astype(np.int64)
    # Sort on the grid key with the raw coordinates as tie-break so the kept
    # representative of each cell does not depend on input order.
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], keys[:, 2], keys[:, 1], keys[:, 0]))
    keys = keys[order]
    pts = pts[order]
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    return pts[keep]


def sample_surface(
    mesh: TriangleMesh, n_cameras: int = 64, rays_per_camera: int = 4096
) -> np.ndarray:
    """Collect first-hit surface points seen from virtual cameras.

    Cameras sit on a sphere of radius 1.5 at Fibonacci-lattice positions
    (the mesh is expected to be normalized into the unit ball).  Each camera
    shoots one ray toward each of ``rays_per_camera`` Fibonacci-distributed
    target directions on the hemisphere of the unit sphere facing it, and
    the union of first hits is returned, deduplicated on a 1e-9 grid.

    Raises
    ------
    ValueError
        If no ray hits the mesh.
    """
    cameras = 1.5 * fibonacci_sphere(n_cameras)
    targets = fibonacci_sphere(2 * rays_per_camera)
    hits = []
    for cam in cameras:
        cam_dir = cam / np.linalg.norm(cam)
        facing = targets @ cam_dir
        # The hemisphere facing the camera, nearest-facing targets first.
        visible = targets[np.argsort(-facing)[:rays_per_camera]]
        rays = visible - cam
        rays /= np.linalg.norm(rays, axis=1)[:, None]
        origins = np.broadcast_to(cam, rays.shape)
        t = raycast_batch(mesh, origins, rays)
        hit = np.isfinite(t)
        if np.any(hit):
            hits.append(cam + t[hit, None] * rays[hit])
    if not hits:
        raise ValueError("no ray hit the mesh; nothing to sample")
    return dedup_points(np.vstack(hits))
