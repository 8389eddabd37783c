"""Zero level set extraction on a regular grid (marching cubes).

The 256-case tables are generated at import from the cube combinatorics:
corner n of a cell sits at offset (n & 1, n >> 1 & 1, n >> 2 & 1) and is
"inside" when the field is negative there. For every sign configuration the
cut edges are paired face by face (on an ambiguous face with four cut edges,
the two edges sharing an inside corner pair up, so inside diagonals are
always separated), the resulting closed loops are oriented so their normals
point toward positive field values, and each loop is fan-triangulated.
Because the face rule is fixed, neighboring cells always agree on shared
faces and the output is watertight for well-resolved smooth fields.

Vertices are placed on sign-changing grid edges by linear interpolation and
deduplicated via global edge ids. The per-cell scan runs as an @njit kernel
or a vectorized numpy fallback (EBMSURF_DISABLE_NUMBA); both produce
identical triangles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import USE_NUMBA, njit
from .geometry import TriangleMesh


class EmptyLevelSetError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 128
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if not self.lo < self.hi:
            raise ValueError("empty bounds")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.resolution - 1)

    def axis_coords(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.resolution)


# ----- table generation -------------------------------------------------------

_CORNER_OFF = np.array([(n & 1, (n >> 1) & 1, (n >> 2) & 1) for n in range(8)], dtype=np.int64)
_EDGES = [(0, 1), (2, 3), (4, 5), (6, 7),
          (0, 2), (1, 3), (4, 6), (5, 7),
          (0, 4), (1, 5), (2, 6), (3, 7)]
_EDGE_AXIS = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2], dtype=np.int64)
_EDGE_OFF = np.array([_CORNER_OFF[a] for a, _ in _EDGES], dtype=np.int64)
_FACES = [
    (0, 2, 4, 6), (1, 3, 5, 7),  # x = 0, x = 1
    (0, 1, 4, 5), (2, 3, 6, 7),  # y = 0, y = 1
    (0, 1, 2, 3), (4, 5, 6, 7),  # z = 0, z = 1
]
_FACE_EDGES = [
    [e for e, (a, b) in enumerate(_EDGES) if a in face and b in face] for face in _FACES
]


def _config_triangles(config: int) -> list[tuple[int, int, int]]:
    """Fan-triangulated, outward-wound patch for one sign configuration."""
    inside = [n for n in range(8) if config >> n & 1]
    if not inside or len(inside) == 8:
        return []
    inside_set = set(inside)
    cut = [e for e, (a, b) in enumerate(_EDGES) if (a in inside_set) != (b in inside_set)]
    cut_set = set(cut)

    partners: dict[int, list[int]] = {e: [] for e in cut}
    for face, face_edges in zip(_FACES, _FACE_EDGES):
        fc = [e for e in face_edges if e in cut_set]
        if len(fc) == 2:
            partners[fc[0]].append(fc[1])
            partners[fc[1]].append(fc[0])
        elif len(fc) == 4:
            # ambiguous face: keep the two inside corners separated
            for c in face:
                if c in inside_set:
                    mine = [e for e in fc if c in _EDGES[e]]
                    partners[mine[0]].append(mine[1])
                    partners[mine[1]].append(mine[0])

    loops = []
    seen: set[int] = set()
    for e0 in cut:
        if e0 in seen:
            continue
        loop = [e0]
        seen.add(e0)
        prev, cur = None, e0
        while True:
            a, b = partners[cur]
            nxt = b if a == prev else a
            if nxt == e0:
                break
            loop.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        loops.append(loop)

    tris: list[tuple[int, int, int]] = []
    corners = _CORNER_OFF.astype(np.float64)
    for loop in loops:
        mids = np.array([(corners[_EDGES[e][0]] + corners[_EDGES[e][1]]) / 2.0 for e in loop])
        normal = np.zeros(3)
        for i in range(len(mids)):
            normal += np.cross(mids[i], mids[(i + 1) % len(mids)])
        ref = np.zeros(3)
        for e in loop:
            a, b = _EDGES[e]
            if a in inside_set:
                ref += corners[b] - corners[a]
            else:
                ref += corners[a] - corners[b]
        d = float(normal @ ref)
        if abs(d) < 1e-12:
            raise AssertionError(f"degenerate loop orientation for config {config}")
        if d < 0:
            loop = loop[::-1]
        for i in range(1, len(loop) - 1):
            tris.append((loop[0], loop[i], loop[i + 1]))
    return tris


def _build_tables() -> tuple[np.ndarray, np.ndarray]:
    all_tris = [_config_triangles(c) for c in range(256)]
    max_t = max(len(t) for t in all_tris)
    table = np.full((256, max_t * 3), -1, dtype=np.int64)
    ntri = np.zeros(256, dtype=np.int64)
    for c, tris in enumerate(all_tris):
        ntri[c] = len(tris)
        flat = [e for tri in tris for e in tri]
        table[c, : len(flat)] = flat
    return table, ntri


TRI_TABLE, N_TRI = _build_tables()


# ----- per-cell scan: numba kernel and numpy fallback --------------------------


@njit(cache=True)
def _scan_cells_numba(F, tri_table, n_tri, edge_axis, edge_off):
    R = F.shape[0]
    Rm = R - 1
    base_y = Rm * R * R
    base_z = base_y + R * Rm * R
    # pass 1: count triangles
    total = 0
    for i in range(Rm):
        for j in range(Rm):
            for k in range(Rm):
                cfg = 0
                for n in range(8):
                    if F[i + (n & 1), j + (n >> 1 & 1), k + (n >> 2 & 1)] < 0.0:
                        cfg |= 1 << n
                total += n_tri[cfg]
    out = np.empty(total * 3, dtype=np.int64)
    pos = 0
    for i in range(Rm):
        for j in range(Rm):
            for k in range(Rm):
                cfg = 0
                for n in range(8):
                    if F[i + (n & 1), j + (n >> 1 & 1), k + (n >> 2 & 1)] < 0.0:
                        cfg |= 1 << n
                cnt = n_tri[cfg] * 3
                for m in range(cnt):
                    e = tri_table[cfg, m]
                    ax = edge_axis[e]
                    ei = i + edge_off[e, 0]
                    ej = j + edge_off[e, 1]
                    ek = k + edge_off[e, 2]
                    if ax == 0:
                        gid = (ei * R + ej) * R + ek
                    elif ax == 1:
                        gid = base_y + (ei * Rm + ej) * R + ek
                    else:
                        gid = base_z + (ei * R + ej) * Rm + ek
                    out[pos] = gid
                    pos += 1
    return out


def _scan_cells_numpy(F):
    R = F.shape[0]
    Rm = R - 1
    base_y = Rm * R * R
    base_z = base_y + R * Rm * R
    S = F < 0.0
    cfg = np.zeros((Rm, Rm, Rm), dtype=np.uint16)
    for n in range(8):
        ox, oy, oz = int(_CORNER_OFF[n, 0]), int(_CORNER_OFF[n, 1]), int(_CORNER_OFF[n, 2])
        cfg |= S[ox : ox + Rm, oy : oy + Rm, oz : oz + Rm].astype(np.uint16) << n
    act = np.argwhere((cfg != 0) & (cfg != 255))
    if len(act) == 0:
        return np.empty(0, dtype=np.int64)
    cf = cfg[act[:, 0], act[:, 1], act[:, 2]]
    counts = N_TRI[cf] * 3
    mask = np.arange(TRI_TABLE.shape[1])[None, :] < counts[:, None]
    loc = TRI_TABLE[cf][mask]  # row-major flat local edge ids
    cell = np.repeat(np.arange(len(act)), counts)
    ei = act[cell, 0] + _EDGE_OFF[loc, 0]
    ej = act[cell, 1] + _EDGE_OFF[loc, 1]
    ek = act[cell, 2] + _EDGE_OFF[loc, 2]
    ax = _EDGE_AXIS[loc]
    gid = np.where(
        ax == 0,
        (ei * R + ej) * R + ek,
        np.where(ax == 1, base_y + (ei * Rm + ej) * R + ek, base_z + (ei * R + ej) * Rm + ek),
    )
    return gid


def _edge_vertices(gids: np.ndarray, F: np.ndarray, origin: np.ndarray, spacing: float):
    R = F.shape[0]
    Rm = R - 1
    base_y = Rm * R * R
    base_z = base_y + R * Rm * R
    n = len(gids)
    ijk = np.empty((n, 3), dtype=np.int64)
    axis = np.empty(n, dtype=np.int64)

    m = gids < base_y
    axis[m] = 0
    loc = gids[m]
    ijk[m, 0], rem = np.divmod(loc, R * R)
    ijk[m, 1], ijk[m, 2] = np.divmod(rem, R)

    m = (gids >= base_y) & (gids < base_z)
    axis[m] = 1
    loc = gids[m] - base_y
    ijk[m, 0], rem = np.divmod(loc, Rm * R)
    ijk[m, 1], ijk[m, 2] = np.divmod(rem, R)

    m = gids >= base_z
    axis[m] = 2
    loc = gids[m] - base_z
    ijk[m, 0], rem = np.divmod(loc, R * Rm)
    ijk[m, 1], ijk[m, 2] = np.divmod(rem, Rm)

    jkl2 = ijk.copy()
    jkl2[np.arange(n), axis] += 1
    va = F[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
    vb = F[jkl2[:, 0], jkl2[:, 1], jkl2[:, 2]]
    t = va / (va - vb)
    pos = origin[None, :] + spacing * ijk.astype(np.float64)
    pos[np.arange(n), axis] += spacing * t
    return pos


def field_to_mesh(F: np.ndarray, grid: GridSpec) -> TriangleMesh:
    """Marching cubes over a sampled field (R, R, R); negative = inside."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    if F.shape != (grid.resolution,) * 3:
        raise ValueError(f"field shape {F.shape} does not match resolution {grid.resolution}")
    if not (F.min() < 0.0 and F.max() >= 0.0):
        raise EmptyLevelSetError("empty level set: field does not change sign")
    if USE_NUMBA:
        gids = _scan_cells_numba(F, TRI_TABLE, N_TRI, _EDGE_AXIS, _EDGE_OFF)
    else:
        gids = _scan_cells_numpy(F)
    if len(gids) == 0:
        raise EmptyLevelSetError("empty level set: no crossed cells")
    uniq, inv = np.unique(gids, return_inverse=True)
    tris = inv.reshape(-1, 3)
    origin = np.array([grid.lo, grid.lo, grid.lo])
    verts = _edge_vertices(uniq, F, origin, grid.spacing)
    return TriangleMesh(verts, tris).cleaned()


def evaluate_field(field, grid: GridSpec, batch_points: int = 65536) -> np.ndarray:
    """Sample `field` (callable over (M, 3) points) on the grid, slab-batched."""
    R = grid.resolution
    coords = grid.axis_coords()
    F = np.empty((R, R, R), dtype=np.float64)
    yz = np.stack(np.meshgrid(coords, coords, indexing="ij"), axis=-1).reshape(-1, 2)
    rows_per_batch = max(1, batch_points // (R * R))
    pts = np.empty((rows_per_batch * R * R, 3), dtype=np.float64)
    for i0 in range(0, R, rows_per_batch):
        i1 = min(R, i0 + rows_per_batch)
        m = (i1 - i0) * R * R
        block = pts[:m].reshape(i1 - i0, R * R, 3)
        block[..., 0] = coords[i0:i1, None]
        block[..., 1:] = yz[None, :, :]
        F[i0:i1] = np.asarray(field(pts[:m]), dtype=np.float64).reshape(i1 - i0, R, R)
    return F


def extract(field, grid: GridSpec | None = None) -> TriangleMesh:
    """Extract the zero level set of a scalar field as a triangle mesh.

    `field` is any callable mapping (M, 3) points to (M,) values (a
    CoordinateNetwork qualifies). Raises EmptyLevelSetError when the field
    does not change sign on the grid.
    """
    grid = grid or GridSpec()
    return field_to_mesh(evaluate_field(field, grid), grid)
