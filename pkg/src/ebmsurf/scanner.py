"""Synthetic multi-view range scans of a mesh with per-ray depth noise.

Viewpoints are Fibonacci-sphere directions at a fixed radius (jittered by the
seed), each looking at the origin through a 60-degree pinhole frustum. Rays
live on a sqrt(rays_per_scan) grid with uniform per-pixel jitter; the first
mesh hit p along direction d is reported as p + eta * d with
eta ~ N(0, noise_sigma^2), so the noise is purely in the depth direction.
All scans merge into one cloud. Ray-triangle intersection (Moller-Trumbore,
closest hit, lowest triangle id on ties) runs as an @njit kernel with a
numpy fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import USE_NUMBA, njit, prange
from .geometry import PointCloud, TriangleMesh

_FOV_DEG = 60.0
_BARY_EPS = 1e-9


class ScanError(RuntimeError):
    pass


@dataclass
class ScanConfig:
    num_scans: int = 10
    rays_per_scan: int = 10000
    noise_sigma: float = 0.0
    camera_radius: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.num_scans < 1 or self.rays_per_scan < 1:
            raise ValueError("num_scans and rays_per_scan must be >= 1")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if not (self.camera_radius > 0.0):
            raise ValueError("camera_radius must be positive")


def fibonacci_directions(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors (golden-angle spiral)."""
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@njit(cache=True, parallel=True)
def _raycast_kernel(origins, dirs, v0, e1, e2, out_t, out_tri):
    n_rays = dirs.shape[0]
    n_tris = v0.shape[0]
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best_t = np.inf
        best_i = -1
        for i in range(n_tris):
            e1x, e1y, e1z = e1[i, 0], e1[i, 1], e1[i, 2]
            e2x, e2y, e2z = e2[i, 0], e2[i, 1], e2[i, 2]
            # p = d x e2
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if -1e-12 < det < 1e-12:
                continue
            inv = 1.0 / det
            sx = ox - v0[i, 0]
            sy = oy - v0[i, 1]
            sz = oz - v0[i, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < -_BARY_EPS or u > 1.0 + _BARY_EPS:
                continue
            # q = s x e1
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < -_BARY_EPS or u + v > 1.0 + _BARY_EPS:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > 1e-9 and t < best_t:
                best_t = t
                best_i = i
        out_t[r] = best_t
        out_tri[r] = best_i


def _raycast_numpy(origins, dirs, v0, e1, e2, out_t, out_tri, chunk: int = 64):
    n_rays = len(dirs)
    for s in range(0, n_rays, chunk):
        o = origins[s : s + chunk, None, :]
        d = dirs[s : s + chunk, None, :]
        p = np.cross(d, e2[None, :, :])
        det = (e1[None, :, :] * p).sum(-1)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        sv = o - v0[None, :, :]
        u = (sv * p).sum(-1) * inv
        q = np.cross(sv, e1[None, :, :])
        v = (d * q).sum(-1) * inv
        t = (e2[None, :, :] * q).sum(-1) * inv
        ok &= (u >= -_BARY_EPS) & (u <= 1.0 + _BARY_EPS) & (v >= -_BARY_EPS)
        ok &= (u + v <= 1.0 + _BARY_EPS) & (t > 1e-9)
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(len(idx))
        best = t[rows, idx]
        out_t[s : s + chunk] = best
        out_tri[s : s + chunk] = np.where(np.isfinite(best), idx, -1)


def cast_rays(mesh: TriangleMesh, origins: np.ndarray, dirs: np.ndarray):
    """First-hit parameter t (inf for misses) and triangle id (-1) per ray."""
    a, b, c = mesh._corners
    v0 = np.ascontiguousarray(a)
    e1 = np.ascontiguousarray(b - a)
    e2 = np.ascontiguousarray(c - a)
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    out_t = np.empty(len(dirs), dtype=np.float64)
    out_tri = np.empty(len(dirs), dtype=np.int64)
    if USE_NUMBA:
        _raycast_kernel(origins, dirs, v0, e1, e2, out_t, out_tri)
    else:
        _raycast_numpy(origins, dirs, v0, e1, e2, out_t, out_tri)
    return out_t, out_tri


def _camera_basis(direction: np.ndarray):
    forward = -direction / np.linalg.norm(direction)
    up0 = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up0) > 0.99:
        up0 = np.array([1.0, 0.0, 0.0])
    right = np.cross(forward, up0)
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return forward, right, up


def scan(mesh: TriangleMesh, cfg: ScanConfig) -> PointCloud:
    """Simulated multi-view depth scan of a normalized mesh.

    Deterministic given cfg.seed; per-scan random streams are derived from
    (seed, scan id), so results do not depend on ray execution order.
    """
    if not (mesh.total_area > 0.0):
        raise ScanError("mesh has zero surface area")
    half_extent = float(np.abs(mesh.vertices).max())
    if cfg.camera_radius <= half_extent:
        raise ScanError(
            f"camera_radius {cfg.camera_radius} must exceed the scene half-extent {half_extent:.3f}"
        )

    grid_n = max(1, int(np.floor(np.sqrt(cfg.rays_per_scan))))
    tan_half = np.tan(np.radians(_FOV_DEG) / 2.0)
    base_dirs = fibonacci_directions(cfg.num_scans)
    root = np.random.SeedSequence(cfg.seed)
    scan_seeds = root.spawn(cfg.num_scans)

    pieces = []
    for s in range(cfg.num_scans):
        rng = np.random.default_rng(scan_seeds[s])
        view = base_dirs[s] + 0.05 * rng.standard_normal(3)
        view /= np.linalg.norm(view)
        eye = cfg.camera_radius * view
        forward, right, up = _camera_basis(view)

        px = np.arange(grid_n, dtype=np.float64)
        u, v = np.meshgrid(px, px, indexing="ij")
        jitter = rng.random((grid_n, grid_n, 2))
        uu = ((u + jitter[..., 0]) / grid_n * 2.0 - 1.0) * tan_half
        vv = ((v + jitter[..., 1]) / grid_n * 2.0 - 1.0) * tan_half
        dirs = forward[None, :] + uu.reshape(-1, 1) * right[None, :] + vv.reshape(-1, 1) * up[None, :]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(eye, dirs.shape)

        t, tri = cast_rays(mesh, origins, dirs)
        eta = cfg.noise_sigma * rng.standard_normal(len(dirs))
        hit = np.isfinite(t)
        if hit.any():
            depth = t[hit] + eta[hit]
            pieces.append(eye[None, :] + depth[:, None] * dirs[hit])
    if not pieces:
        raise ScanError("object not visible: no ray hit the mesh")
    return PointCloud(np.concatenate(pieces))
