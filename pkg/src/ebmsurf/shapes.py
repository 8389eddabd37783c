"""Analytic reference shapes: meshes for scanning and SDFs for field tests."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def make_icosphere(radius: float = 0.9, subdivisions: int = 4) -> TriangleMesh:
    """Icosahedron subdivided `subdivisions` times, projected to the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
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
        edge_mid: dict[tuple[int, int], int] = {}
        new_verts = [verts]
        offset = len(verts)

        def midpoint(i, j):
            nonlocal offset
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                new_verts.append(m[None, :])
                edge_mid[key] = offset
                offset += 1
            return edge_mid[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.concatenate(new_verts)
        faces = np.array(new_faces, dtype=np.int64)
    return TriangleMesh(verts * radius, faces)


def make_torus(
    major_radius: float = 0.6,
    minor_radius: float = 0.3,
    segments_major: int = 96,
    segments_minor: int = 48,
) -> TriangleMesh:
    """Axis-aligned torus around z, as a closed quad grid split to triangles."""
    iu, iv = np.meshgrid(np.arange(segments_major), np.arange(segments_minor), indexing="ij")
    u = 2.0 * np.pi * iu / segments_major
    v = 2.0 * np.pi * iv / segments_minor
    x = (major_radius + minor_radius * np.cos(v)) * np.cos(u)
    y = (major_radius + minor_radius * np.cos(v)) * np.sin(u)
    z = minor_radius * np.sin(v)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    def vid(i, j):
        return (i % segments_major) * segments_minor + (j % segments_minor)

    faces = []
    for i in range(segments_major):
        for j in range(segments_minor):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces += [[a, b, c], [a, c, d]]
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def make_box(half_extents=(0.7, 0.5, 0.4)) -> TriangleMesh:
    hx, hy, hz = half_extents
    verts = np.array(
        [[sx * hx, sy * hy, sz * hz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)],
        dtype=np.float64,
    )
    # outward-wound faces for the 8-corner layout above
    faces = np.array(
        [
            [0, 2, 1], [1, 2, 3],  # z = -hz
            [4, 5, 6], [5, 7, 6],  # z = +hz
            [0, 1, 4], [1, 5, 4],  # y = -hy
            [2, 6, 3], [3, 6, 7],  # y = +hy
            [0, 4, 2], [2, 4, 6],  # x = -hx
            [1, 3, 5], [3, 7, 5],  # x = +hx
        ],
        dtype=np.int64,
    )
    return TriangleMesh(verts, faces)


def sphere_sdf(points: np.ndarray, radius: float = 0.5) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return np.linalg.norm(pts, axis=-1) - radius


def torus_sdf(points: np.ndarray, major_radius: float = 0.6, minor_radius: float = 0.3) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    q = np.hypot(np.hypot(pts[..., 0], pts[..., 1]) - major_radius, pts[..., 2])
    return q - minor_radius
