"""Exact nearest-neighbor queries over a fixed point set.

Array-backed KD-tree with a numba traversal kernel and a brute-force numpy
fallback (selected via EBMSURF_DISABLE_NUMBA). Both paths return the exact
Euclidean nearest neighbor; ties break to the lowest point id.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit, prange
from .geometry import GeometryError, as_points

_LEAF_SIZE = 16


def _build_tree(points: np.ndarray):
    """Median-split KD-tree over `points`, packed into flat arrays.

    Returns (perm, axis, split, left, right, start, end); leaves have
    axis == -1 and own perm[start:end].
    """
    n = len(points)
    perm = np.arange(n, dtype=np.int64)
    axis_l, split_l, left_l, right_l, start_l, end_l = [], [], [], [], [], []

    def new_node():
        axis_l.append(-1)
        split_l.append(0.0)
        left_l.append(-1)
        right_l.append(-1)
        start_l.append(0)
        end_l.append(0)
        return len(axis_l) - 1

    # explicit stack; children created before being descended into
    root = new_node()
    stack = [(root, 0, n)]
    while stack:
        node, lo, hi = stack.pop()
        if hi - lo <= _LEAF_SIZE:
            start_l[node], end_l[node] = lo, hi
            continue
        seg = perm[lo:hi]
        coords = points[seg]
        ax = int(np.argmax(coords.max(axis=0) - coords.min(axis=0)))
        mid = (hi - lo) // 2
        order = np.argpartition(coords[:, ax], mid)
        perm[lo:hi] = seg[order]
        axis_l[node] = ax
        split_l[node] = points[perm[lo + mid], ax]
        lc, rc = new_node(), new_node()
        left_l[node], right_l[node] = lc, rc
        stack.append((lc, lo, lo + mid))
        stack.append((rc, lo + mid, hi))
    return (
        perm,
        np.array(axis_l, dtype=np.int8),
        np.array(split_l, dtype=np.float64),
        np.array(left_l, dtype=np.int64),
        np.array(right_l, dtype=np.int64),
        np.array(start_l, dtype=np.int64),
        np.array(end_l, dtype=np.int64),
    )


@njit(cache=True, parallel=True)
def _nn_kernel(points, perm, axis, split, left, right, start, end, queries, out_id, out_d2):
    for q in prange(queries.shape[0]):
        qx, qy, qz = queries[q, 0], queries[q, 1], queries[q, 2]
        best_d2 = np.inf
        best_id = -1
        node_stack = np.empty(128, dtype=np.int64)
        key_stack = np.empty(128, dtype=np.float64)
        node_stack[0] = 0
        key_stack[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            if key_stack[top] > best_d2:
                continue
            node = node_stack[top]
            while axis[node] >= 0:
                ax = axis[node]
                if ax == 0:
                    delta = qx - split[node]
                elif ax == 1:
                    delta = qy - split[node]
                else:
                    delta = qz - split[node]
                if delta < 0.0:
                    near, far = left[node], right[node]
                else:
                    near, far = right[node], left[node]
                fd2 = delta * delta
                if fd2 <= best_d2:
                    node_stack[top] = far
                    key_stack[top] = fd2
                    top += 1
                node = near
            for i in range(start[node], end[node]):
                pid = perm[i]
                dx = points[pid, 0] - qx
                dy = points[pid, 1] - qy
                dz = points[pid, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best_d2 or (d2 == best_d2 and pid < best_id):
                    best_d2 = d2
                    best_id = pid
        out_id[q] = best_id
        out_d2[q] = best_d2


@njit(cache=True, parallel=True)
def _knn_kernel(points, perm, axis, split, left, right, start, end, queries, k, out_id, out_d2):
    for q in prange(queries.shape[0]):
        qx, qy, qz = queries[q, 0], queries[q, 1], queries[q, 2]
        kd2 = out_d2[q]
        kid = out_id[q]
        for j in range(k):
            kd2[j] = np.inf
            kid[j] = -1
        count = 0
        node_stack = np.empty(128, dtype=np.int64)
        key_stack = np.empty(128, dtype=np.float64)
        node_stack[0] = 0
        key_stack[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            if count == k and key_stack[top] > kd2[k - 1]:
                continue
            node = node_stack[top]
            while axis[node] >= 0:
                ax = axis[node]
                if ax == 0:
                    delta = qx - split[node]
                elif ax == 1:
                    delta = qy - split[node]
                else:
                    delta = qz - split[node]
                if delta < 0.0:
                    near, far = left[node], right[node]
                else:
                    near, far = right[node], left[node]
                fd2 = delta * delta
                if count < k or fd2 <= kd2[k - 1]:
                    node_stack[top] = far
                    key_stack[top] = fd2
                    top += 1
                node = near
            for i in range(start[node], end[node]):
                pid = perm[i]
                dx = points[pid, 0] - qx
                dy = points[pid, 1] - qy
                dz = points[pid, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if count < k or d2 < kd2[k - 1] or (d2 == kd2[k - 1] and pid < kid[k - 1]):
                    # insertion into the sorted (d2, id) list
                    j = min(count, k - 1)
                    while j > 0 and (kd2[j - 1] > d2 or (kd2[j - 1] == d2 and kid[j - 1] > pid)):
                        kd2[j] = kd2[j - 1]
                        kid[j] = kid[j - 1]
                        j -= 1
                    kd2[j] = d2
                    kid[j] = pid
                    if count < k:
                        count += 1


def _nn_numpy(points, queries, chunk: int = 256):
    out_id = np.empty(len(queries), dtype=np.int64)
    out_d2 = np.empty(len(queries), dtype=np.float64)
    for s in range(0, len(queries), chunk):
        q = queries[s : s + chunk]
        d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)  # first occurrence -> lowest id on ties
        out_id[s : s + chunk] = idx
        out_d2[s : s + chunk] = d2[np.arange(len(q)), idx]
    return out_id, out_d2


def _knn_numpy(points, queries, k, chunk: int = 256):
    out_id = np.empty((len(queries), k), dtype=np.int64)
    out_d2 = np.empty((len(queries), k), dtype=np.float64)
    for s in range(0, len(queries), chunk):
        q = queries[s : s + chunk]
        d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]  # stable -> lowest id on ties
        out_id[s : s + chunk] = idx
        out_d2[s : s + chunk] = np.take_along_axis(d2, idx, axis=1)
    return out_id, out_d2


class SpatialIndex:
    """Immutable nearest-neighbor accelerator; queries are thread-safe."""

    def __init__(self, points):
        pts = as_points(points)
        if len(pts) == 0:
            raise GeometryError("cannot index an empty point set")
        self.points = pts
        (
            self._perm,
            self._axis,
            self._split,
            self._left,
            self._right,
            self._start,
            self._end,
        ) = _build_tree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def nearest_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Exact nearest neighbor per query row: (ids, distances)."""
        q = as_points(queries, "queries")
        if USE_NUMBA:
            out_id = np.empty(len(q), dtype=np.int64)
            out_d2 = np.empty(len(q), dtype=np.float64)
            _nn_kernel(
                self.points, self._perm, self._axis, self._split, self._left,
                self._right, self._start, self._end, q, out_id, out_d2,
            )
        else:
            out_id, out_d2 = _nn_numpy(self.points, q)
        return out_id, np.sqrt(out_d2)

    def nearest(self, query) -> tuple[int, float]:
        ids, dists = self.nearest_many(np.asarray(query, dtype=np.float64)[None, :])
        return int(ids[0]), float(dists[0])

    def knn_many(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k nearest neighbors per query row, sorted by (distance, id)."""
        q = as_points(queries, "queries")
        if not 1 <= k <= len(self.points):
            raise GeometryError(f"k={k} out of range for {len(self.points)} points")
        if USE_NUMBA:
            out_id = np.empty((len(q), k), dtype=np.int64)
            out_d2 = np.empty((len(q), k), dtype=np.float64)
            _knn_kernel(
                self.points, self._perm, self._axis, self._split, self._left,
                self._right, self._start, self._end, q, k, out_id, out_d2,
            )
        else:
            out_id, out_d2 = _knn_numpy(self.points, q, k)
        return out_id, np.sqrt(out_d2)


def nearest(index: SpatialIndex, query) -> tuple[int, float]:
    return index.nearest(query)
