"""Procedural triangle meshes used by the tests, demos and benchmarks."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Unit icosahedron subdivided ``subdivisions`` times, vertices on the sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1)[:, None]
    return TriangleMesh.from_arrays(verts * radius, faces)


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four, sharing midpoint vertices."""
    midpoint_cache: dict[tuple[int, int], int] = {}
    verts = list(verts)

    def midpoint(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key not in midpoint_cache:
            verts.append(0.5 * (verts[i] + verts[j]))
            midpoint_cache[key] = len(verts) - 1
        return midpoint_cache[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(new_faces, dtype=np.int64)


def cylinder(
    radius: float = 0.4,
    x_min: float = -1.4,
    x_max: float = 1.4,
    segments: int = 48,
    rings: int = 12,
) -> TriangleMesh:
    """Open cylinder around the x axis (no end caps)."""
    xs = np.linspace(x_min, x_max, rings + 1)
    angles = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    verts = []
    for x in xs:
        for a in angles:
            verts.append([x, radius * np.cos(a), radius * np.sin(a)])
    faces = []
    for r in range(rings):
        for s in range(segments):
            s2 = (s + 1) % segments
            a = r * segments + s
            b = r * segments + s2
            c = (r + 1) * segments + s
            d = (r + 1) * segments + s2
            faces += [[a, b, c], [b, d, c]]
    return TriangleMesh.from_arrays(np.array(verts), np.array(faces, dtype=np.int64))


def merge(*meshes: TriangleMesh) -> TriangleMesh:
    """Concatenate meshes into a single triangle soup."""
    verts = []
    faces = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriangleMesh.from_arrays(np.vstack(verts), np.vstack(faces))


def dumbbell(
    sphere_radius: float = 1.0,
    separation: float = 1.5,
    bar_radius: float = 0.4,
    subdivisions: int = 2,
) -> TriangleMesh:
    """Two spheres at ``(+-separation, 0, 0)`` bridged by an open cylinder."""
    left = icosphere(subdivisions, sphere_radius)
    right = icosphere(subdivisions, sphere_radius)
    left = TriangleMesh.from_arrays(left.vertices - [separation, 0.0, 0.0], left.faces)
    right = TriangleMesh.from_arrays(right.vertices + [separation, 0.0, 0.0], right.faces)
    bar = cylinder(radius=bar_radius, x_min=-separation, x_max=separation)
    return merge(left, right, bar)
