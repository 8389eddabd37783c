"""Core geometric types: point clouds, triangle meshes, normalization.

Coordinates are plain float64 numpy arrays of shape (N, 3). All container
types freeze their arrays after construction; downstream code treats them as
immutable and queries are safe to run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

NORMALIZED_HALF_EXTENT = 0.9


class GeometryError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def as_points(a, name: str = "points") -> np.ndarray:
    """Validate and return an (N, 3) float64 coordinate array."""
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim == 1 and pts.shape == (3,):
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"{name} must have shape (N, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise GeometryError(f"{name} contains non-finite values")
    return pts


@dataclass
class PointCloud:
    """An ordered set of 3D sample positions, optionally with unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = as_points(self.points)
        if len(pts) == 0:
            raise GeometryError("empty geometry")
        self.points = _freeze(pts)
        if self.normals is not None:
            nrm = as_points(self.normals, "normals")
            if nrm.shape != self.points.shape:
                raise GeometryError("normals must match points in shape")
            lens = np.linalg.norm(nrm, axis=1)
            if np.abs(lens - 1.0).max() > 1e-6:
                raise GeometryError("normals must have unit length")
            self.normals = _freeze(nrm)

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box as (lo, hi)."""
        return self.points.min(axis=0), self.points.max(axis=0)

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, normals)


@dataclass
class TriangleMesh:
    """Indexed triangle set. Vertices (V, 3) float64, triangles (T, 3) int."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = _freeze(as_points(self.vertices, "vertices"))
        tris = np.asarray(self.triangles)
        if tris.size == 0:
            tris = tris.reshape(0, 3)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise GeometryError(f"triangles must have shape (T, 3), got {tris.shape}")
        tris = tris.astype(np.int64)
        if len(tris) and (tris.min() < 0 or tris.max() >= len(self.vertices)):
            raise GeometryError("triangle index out of range")
        self.triangles = _freeze(tris)

    def __len__(self) -> int:
        return len(self.triangles)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def _corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    @cached_property
    def face_cross(self) -> np.ndarray:
        a, b, c = self._corners
        return np.cross(b - a, c - a)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        cross = self.face_cross
        lens = np.linalg.norm(cross, axis=1, keepdims=True)
        lens[lens == 0.0] = 1.0
        return cross / lens

    @cached_property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        if len(self.triangles) == 0:
            return False
        e = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool((counts == 2).all())

    def euler_characteristic(self) -> int:
        e = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        e.sort(axis=1)
        n_edges = len(np.unique(e, axis=0))
        return len(self.vertices) - n_edges + len(self.triangles)

    def cleaned(self, weld: bool = True) -> "TriangleMesh":
        """Weld coincident vertices and drop zero-area triangles."""
        verts, tris = self.vertices, self.triangles
        if weld and len(verts):
            uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
            verts = uniq
            tris = inverse[tris]
        if len(tris):
            a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
            area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
            tris = tris[area2 > 0.0]
        # drop vertices no longer referenced
        if len(tris):
            used, remapped = np.unique(tris, return_inverse=True)
            verts = verts[used]
            tris = remapped.reshape(-1, 3)
        return TriangleMesh(verts, tris)


@dataclass(frozen=True)
class NormalizationTransform:
    """Invertible map x -> (x - center) * scale used to normalize geometry."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", _freeze(as_points(self.center)[0]))
        if not (self.scale > 0.0):
            raise GeometryError("scale must be positive")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": float(self.scale)}

    @staticmethod
    def from_dict(d: dict) -> "NormalizationTransform":
        return NormalizationTransform(np.asarray(d["center"], dtype=np.float64), float(d["scale"]))


def normalize(obj):
    """Center geometry at the origin and scale it into [-0.9, 0.9]^3.

    Returns (normalized object, transform). A degenerate (zero-extent) input
    keeps scale 1.0 instead of erroring so single-point pipelines compose.
    """
    if isinstance(obj, PointCloud):
        pts = obj.points
    elif isinstance(obj, TriangleMesh):
        pts = obj.vertices
    else:
        raise GeometryError(f"cannot normalize {type(obj).__name__}")
    if len(pts) == 0:
        raise GeometryError("empty geometry")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    half_extent = float((hi - lo).max()) * 0.5
    scale = NORMALIZED_HALF_EXTENT / half_extent if half_extent > 0.0 else 1.0
    tf = NormalizationTransform(center, scale)
    if isinstance(obj, PointCloud):
        out = PointCloud(tf.apply(pts), obj.normals)
    else:
        out = TriangleMesh(tf.apply(pts), obj.triangles)
    return out, tf


def denormalize(obj, tf: NormalizationTransform):
    """Invert :func:`normalize` on a cloud or mesh."""
    if isinstance(obj, PointCloud):
        return PointCloud(tf.invert(obj.points), obj.normals)
    if isinstance(obj, TriangleMesh):
        return TriangleMesh(tf.invert(obj.vertices), obj.triangles)
    raise GeometryError(f"cannot denormalize {type(obj).__name__}")


def sample_surface(mesh: TriangleMesh, n: int, seed) -> PointCloud:
    """Draw n points area-uniformly from the mesh, with face normals.

    Triangles are chosen proportionally to area and points uniformly in
    barycentric coordinates. Deterministic given the seed.
    """
    if n < 1:
        raise GeometryError("n must be >= 1")
    areas = mesh.face_areas
    total = areas.sum()
    if not (total > 0.0):
        raise GeometryError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    tri_idx = np.searchsorted(cdf, rng.random(n), side="right")
    tri_idx = np.minimum(tri_idx, len(areas) - 1)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a, b, c = mesh._corners
    pts = (
        a[tri_idx]
        + u[:, None] * (b[tri_idx] - a[tri_idx])
        + v[:, None] * (c[tri_idx] - a[tri_idx])
    )
    return PointCloud(pts, mesh.face_normals[tri_idx])


def estimate_normals(cloud: PointCloud, k: int = 40) -> PointCloud:
    """Per-point unit normals from k-NN covariance, locally sign-consistent.

    The normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance; signs are propagated breadth-first over the k-NN graph, so
    orientation is only locally consistent (sufficient for absolute-dot
    metrics), not globally.
    """
    from .kdtree import SpatialIndex

    pts = cloud.points
    n = len(pts)
    if k >= n:
        raise GeometryError(f"k={k} must be smaller than the point count {n}")
    index = SpatialIndex(pts)
    ids, _ = index.knn_many(pts, k + 1)  # first neighbor is the point itself
    neigh = pts[ids]  # (n, k+1, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # smallest eigenvalue
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    # breadth-first sign propagation over the k-NN graph
    visited = np.zeros(n, dtype=bool)
    order = np.arange(n)
    for start in order:
        if visited[start]:
            continue
        visited[start] = True
        queue = [start]
        while queue:
            i = queue.pop()
            for j in ids[i, 1:]:
                if not visited[j]:
                    visited[j] = True
                    if np.dot(normals[i], normals[j]) < 0.0:
                        normals[j] = -normals[j]
                    queue.append(j)
    return PointCloud(pts, normals)
