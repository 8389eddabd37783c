"""Point-cloud and mesh file I/O: PLY (ascii + binary little-endian), OBJ, XYZ.

PLY binary_little_endian with double-precision properties is the canonical
output so coordinates round-trip exactly; ascii PLY is accepted on input.
OBJ covers v/f records; XYZ is whitespace-separated ``x y z [nx ny nz]``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriangleMesh


class ParseError(ValueError):
    def __init__(self, path, message, line: int | None = None, offset: int | None = None):
        where = str(path)
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" (byte {offset})"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.offset = offset


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(path: Path, data: bytes):
    lines = []
    pos = 0
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ParseError(path, "unterminated header (missing end_header)", line=len(lines) + 1)
        lines.append(data[pos:nl].decode("ascii", errors="replace").strip())
        pos = nl + 1
        if lines[-1] == "end_header":
            break
        if len(lines) > 1000:
            raise ParseError(path, "header too long", line=len(lines))
    if not lines or lines[0] != "ply":
        raise ParseError(path, "not a PLY file (missing 'ply' magic)", line=1)

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype, is_list, count_dtype)])
    for ln, line in enumerate(lines[1:-1], start=2):
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tok = line.split()
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(path, f"unsupported format {line!r}", line=ln)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(path, f"malformed element line {line!r}", line=ln)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(path, f"bad element count {tok[2]!r}", line=ln) from None
            elements.append((tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError(path, "property before any element", line=ln)
            if tok[1] == "list":
                if len(tok) != 5:
                    raise ParseError(path, f"malformed list property {line!r}", line=ln)
                cdt, vdt = _PLY_TYPES.get(tok[2]), _PLY_TYPES.get(tok[3])
                if cdt is None or vdt is None:
                    raise ParseError(path, f"unknown property type in {line!r}", line=ln)
                elements[-1][2].append((tok[4], vdt, True, cdt))
            else:
                if len(tok) != 3:
                    raise ParseError(path, f"malformed property {line!r}", line=ln)
                dt = _PLY_TYPES.get(tok[1])
                if dt is None:
                    raise ParseError(path, f"unknown property type {tok[1]!r}", line=ln)
                elements[-1][2].append((tok[2], dt, False, None))
    if fmt is None:
        raise ParseError(path, "missing format line")
    return fmt, elements, pos


def _read_ply(path: Path):
    data = Path(path).read_bytes()
    fmt, elements, body_start = _parse_ply_header(path, data)

    parsed: dict[str, dict] = {}
    if fmt == "ascii":
        text = data[body_start:].decode("ascii", errors="replace")
        rows = [r.split() for r in text.splitlines() if r.strip()]
        cursor = 0
        for name, count, props in elements:
            if any(p[2] for p in props):  # list properties (faces)
                lists = []
                for i in range(count):
                    if cursor >= len(rows):
                        raise ParseError(path, f"element {name!r}: expected {count} rows, got {i}")
                    row = rows[cursor]
                    cursor += 1
                    n = int(row[0])
                    if len(row) != n + 1:
                        raise ParseError(path, f"element {name!r} row {i}: bad list length")
                    lists.append([int(v) for v in row[1:]])
                parsed[name] = {"lists": lists}
            else:
                vals = np.empty((count, len(props)), dtype=np.float64)
                for i in range(count):
                    if cursor >= len(rows):
                        raise ParseError(path, f"element {name!r}: expected {count} rows, got {i}")
                    row = rows[cursor]
                    cursor += 1
                    if len(row) != len(props):
                        raise ParseError(path, f"element {name!r} row {i}: expected {len(props)} values, got {len(row)}")
                    vals[i] = [float(v) for v in row]
                parsed[name] = {"cols": {p[0]: vals[:, j] for j, p in enumerate(props)}}
    else:
        offset = body_start
        for name, count, props in elements:
            if any(p[2] for p in props):
                lists = []
                for i in range(count):
                    cprop = props[0]
                    cdt = np.dtype("<" + cprop[3])
                    vdt = np.dtype("<" + cprop[1])
                    if offset + cdt.itemsize > len(data):
                        raise ParseError(path, f"element {name!r}: truncated", offset=offset)
                    n = int(np.frombuffer(data, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    if offset + n * vdt.itemsize > len(data):
                        raise ParseError(path, f"element {name!r}: truncated list", offset=offset)
                    lists.append(np.frombuffer(data, vdt, n, offset).tolist())
                    offset += n * vdt.itemsize
                parsed[name] = {"lists": lists}
            else:
                rec = np.dtype([(p[0], "<" + p[1]) for p in props])
                need = count * rec.itemsize
                if offset + need > len(data):
                    raise ParseError(path, f"element {name!r}: expected {need} bytes", offset=offset)
                arr = np.frombuffer(data, rec, count, offset)
                offset += need
                parsed[name] = {"cols": {p[0]: arr[p[0]].astype(np.float64) for p in props}}
    return parsed


def _ply_vertices(path, parsed):
    if "vertex" not in parsed or "cols" not in parsed["vertex"]:
        raise ParseError(path, "missing vertex element")
    cols = parsed["vertex"]["cols"]
    for c in ("x", "y", "z"):
        if c not in cols:
            raise ParseError(path, f"vertex element lacks property {c!r}")
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    normals = None
    if all(c in cols for c in ("nx", "ny", "nz")):
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1)
    return pts, normals


def load_ply_point_cloud(path) -> PointCloud:
    pts, normals = _ply_vertices(path, _read_ply(path))
    return PointCloud(pts, normals)


def load_ply_mesh(path) -> TriangleMesh:
    parsed = _read_ply(path)
    pts, _ = _ply_vertices(path, parsed)
    if "face" not in parsed or "lists" not in parsed["face"]:
        raise ParseError(path, "missing face element")
    tris = []
    for poly in parsed["face"]["lists"]:
        for i in range(1, len(poly) - 1):
            tris.append((poly[0], poly[i], poly[i + 1]))
    return TriangleMesh(pts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def _write_ply(path, pts: np.ndarray, normals: np.ndarray | None, tris: np.ndarray | None):
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(pts)}"]
    header += [f"property double {c}" for c in ("x", "y", "z")]
    cols = [pts]
    if normals is not None:
        header += [f"property double {c}" for c in ("nx", "ny", "nz")]
        cols.append(normals)
    if tris is not None:
        header += [f"element face {len(tris)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    body = np.concatenate(cols, axis=1).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(body)
        if tris is not None:
            face_rec = np.empty(len(tris), dtype=np.dtype([("n", "u1"), ("v", "<i4", (3,))]))
            face_rec["n"] = 3
            face_rec["v"] = tris.astype("<i4")
            fh.write(face_rec.tobytes())


def save_ply_point_cloud(cloud: PointCloud, path) -> None:
    _write_ply(path, cloud.points, cloud.normals, None)


def save_ply_mesh(mesh: TriangleMesh, path) -> None:
    _write_ply(path, mesh.vertices, None, mesh.triangles)


def load_obj_mesh(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for ln, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError(path, f"malformed vertex {line.strip()!r}", line=ln)
                try:
                    verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
                except ValueError:
                    raise ParseError(path, f"bad vertex coordinate in {line.strip()!r}", line=ln) from None
            elif tok[0] == "f":
                if len(tok) < 4:
                    raise ParseError(path, f"face with fewer than 3 vertices", line=ln)
                idx = []
                for t in tok[1:]:
                    try:
                        i = int(t.split("/")[0])
                    except ValueError:
                        raise ParseError(path, f"bad face index {t!r}", line=ln) from None
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for i in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[i], idx[i + 1]))
            # other records (vn, vt, o, g, s, mtllib, usemtl) are ignored
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj_mesh(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_xyz_point_cloud(path) -> PointCloud:
    rows = []
    ncols = None
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for ln, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok:
                continue
            if len(tok) not in (3, 6):
                raise ParseError(path, f"expected 3 or 6 columns, got {len(tok)}", line=ln)
            if ncols is None:
                ncols = len(tok)
            elif len(tok) != ncols:
                raise ParseError(path, f"inconsistent column count ({len(tok)} vs {ncols})", line=ln)
            try:
                rows.append([float(t) for t in tok])
            except ValueError:
                raise ParseError(path, f"bad number in {line.strip()!r}", line=ln) from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, ncols or 3)
    if arr.shape[1] == 6:
        return PointCloud(arr[:, :3], arr[:, 3:])
    return PointCloud(arr)


def save_xyz_point_cloud(cloud: PointCloud, path) -> None:
    arr = cloud.points
    if cloud.normals is not None:
        arr = np.concatenate([cloud.points, cloud.normals], axis=1)
    with open(path, "w", encoding="ascii") as fh:
        for row in arr:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_point_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return load_ply_point_cloud(path)
    if suffix in (".xyz", ".txt"):
        return load_xyz_point_cloud(path)
    raise ParseError(path, f"unsupported point-cloud format {suffix!r}")


def save_point_cloud(cloud: PointCloud, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        save_ply_point_cloud(cloud, path)
    elif suffix in (".xyz", ".txt"):
        save_xyz_point_cloud(cloud, path)
    else:
        raise ParseError(path, f"unsupported point-cloud format {suffix!r}")


def load_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return load_ply_mesh(path)
    if suffix == ".obj":
        return load_obj_mesh(path)
    raise ParseError(path, f"unsupported mesh format {suffix!r}")


def save_mesh(mesh: TriangleMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        save_ply_mesh(mesh, path)
    elif suffix == ".obj":
        save_obj_mesh(mesh, path)
    else:
        raise ParseError(path, f"unsupported mesh format {suffix!r}")
