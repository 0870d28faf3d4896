"""XYZ, PLY and OFF readers and writers."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .geometry import PointCloud
from .mesh import TriangleMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_SUPPORTED_ELEMENTS = ("vertex", "face")


class FormatError(ValueError):
    pass


def _format_of(path, fmt: str | None) -> str:
    if fmt:
        return fmt.lower()
    ext = Path(path).suffix.lower().lstrip(".")
    if ext in ("xyz", "txt", "pts"):
        return "xyz"
    if ext in ("ply", "off"):
        return ext
    raise FormatError(f"cannot infer format from {path!s}")


# ---------------------------------------------------------------- XYZ


def read_xyz(path) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: expected 'x y z'")
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed coordinate") from None
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def write_xyz(path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, fmt="%.17g")


# ---------------------------------------------------------------- PLY


class _Element:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.props: list[tuple[str, str, str | None]] = []  # name, dtype, list-count dtype

    @property
    def is_fixed(self) -> bool:
        return all(p[2] is None for p in self.props)


def _parse_header(fh, path) -> tuple[str, list[_Element], int]:
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError(f"{path}:1: not a PLY file")
    encoding = None
    elements: list[_Element] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError(f"{path}:{lineno}: unterminated header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            encoding = parts[1]
            if encoding not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}:{lineno}: unsupported encoding {encoding}")
        elif key == "element":
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: malformed element line")
            if parts[1] not in _SUPPORTED_ELEMENTS:
                raise FormatError(f"{path}:{lineno}: unsupported PLY element '{parts[1]}'")
            elements.append(_Element(parts[1], int(parts[2])))
        elif key == "property":
            if not elements:
                raise FormatError(f"{path}:{lineno}: property before element")
            try:
                if parts[1] == "list":
                    elements[-1].props.append((parts[4], _PLY_TYPES[parts[3]], _PLY_TYPES[parts[2]]))
                else:
                    elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]], None))
            except (KeyError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed property line") from None
        elif key == "end_header":
            break
        else:
            raise FormatError(f"{path}:{lineno}: unexpected header keyword '{key}'")
    if encoding is None:
        raise FormatError(f"{path}: missing format line")
    return encoding, elements, lineno


def _vertex_columns(data: dict[str, np.ndarray], path) -> tuple[np.ndarray, np.ndarray | None]:
    for axis in "xyz":
        if axis not in data:
            raise FormatError(f"{path}: vertex element lacks property '{axis}'")
    pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    labels = data.get("label")
    return pts, None if labels is None else labels.astype(np.int8)


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Return (vertices, labels or None, triangles or None)."""
    with open(path, "rb") as fh:
        encoding, elements, header_lines = _parse_header(fh, path)
        body = fh.read()
    vertex_data: dict[str, np.ndarray] = {}
    faces = None
    if encoding == "ascii":
        lines = body.decode("ascii").splitlines()
        pos = 0
        for el in elements:
            rows = lines[pos : pos + el.count]
            if len(rows) < el.count:
                raise FormatError(f"{path}: expected {el.count} {el.name} lines, found {len(rows)}")
            if el.name == "vertex":
                try:
                    table = np.array([r.split() for r in rows], dtype=np.float64).reshape(el.count, -1)
                except ValueError:
                    bad = _first_bad_row(rows, len(el.props))
                    raise FormatError(f"{path}:{header_lines + pos + bad + 1}: malformed vertex line") from None
                if table.shape[1] != len(el.props):
                    raise FormatError(f"{path}:{header_lines + pos + 1}: wrong vertex property count")
                vertex_data = {p[0]: table[:, i] for i, p in enumerate(el.props)}
            else:
                faces = _ascii_faces(rows, el, path, header_lines + pos)
            pos += el.count
    else:
        offset = 0
        for el in elements:
            if el.is_fixed:
                dtype = np.dtype([(p[0], "<" + p[1]) for p in el.props])
                need = dtype.itemsize * el.count
                if offset + need > len(body):
                    raise FormatError(f"{path}: truncated {el.name} data")
                arr = np.frombuffer(body, dtype=dtype, count=el.count, offset=offset)
                offset += need
                if el.name == "vertex":
                    vertex_data = {name: arr[name] for name in arr.dtype.names}
                else:
                    raise FormatError(f"{path}: face element without a vertex index list")
            else:
                if el.name != "face" or len(el.props) != 1:
                    raise FormatError(f"{path}: unsupported list layout in element '{el.name}'")
                faces, offset = _binary_faces(body, offset, el, path)
    points, labels = _vertex_columns(vertex_data, path)
    return points, labels, faces


def _first_bad_row(rows, n_props: int) -> int:
    for i, r in enumerate(rows):
        vals = r.split()
        if len(vals) != n_props:
            return i
        try:
            [float(v) for v in vals]
        except ValueError:
            return i
    return 0


def _ascii_faces(rows, el, path, line0) -> np.ndarray:
    tris = []
    for i, r in enumerate(rows):
        vals = r.split()
        try:
            n = int(vals[0])
            idx = [int(v) for v in vals[1 : 1 + n]]
        except (ValueError, IndexError):
            raise FormatError(f"{path}:{line0 + i + 1}: malformed face line") from None
        if n < 3 or len(idx) != n:
            raise FormatError(f"{path}:{line0 + i + 1}: malformed face line")
        tris.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, n - 1))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _binary_faces(body: bytes, offset: int, el, path) -> tuple[np.ndarray, int]:
    _, item_t, count_t = el.props[0]
    count_dt = np.dtype("<" + count_t)
    item_dt = np.dtype("<" + item_t)
    tris = []
    for _ in range(el.count):
        if offset + count_dt.itemsize > len(body):
            raise FormatError(f"{path}: truncated face data")
        n = int(np.frombuffer(body, dtype=count_dt, count=1, offset=offset)[0])
        offset += count_dt.itemsize
        if offset + n * item_dt.itemsize > len(body):
            raise FormatError(f"{path}: truncated face data")
        idx = np.frombuffer(body, dtype=item_dt, count=n, offset=offset).astype(np.int64)
        offset += n * item_dt.itemsize
        tris.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, n - 1))
    return np.array(tris, dtype=np.int64).reshape(-1, 3), offset


def write_ply(path, points: np.ndarray, labels=None, triangles=None, binary: bool = False) -> None:
    points = np.asarray(points, dtype=np.float64)
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(points)}",
              "property double x", "property double y", "property double z"]
    if labels is not None:
        header.append("property int label")
    if triangles is not None:
        header += [f"element face {len(triangles)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if labels is not None:
                fields.append(("label", "<i4"))
            rec = np.empty(len(points), dtype=fields)
            rec["x"], rec["y"], rec["z"] = points.T
            if labels is not None:
                rec["label"] = labels
            fh.write(rec.tobytes())
            if triangles is not None:
                frec = np.empty(len(triangles), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                frec["n"] = 3
                frec["v"] = triangles
                fh.write(frec.tobytes())
        else:
            lines = []
            if labels is None:
                lines = [f"{x!r} {y!r} {z!r}" for x, y, z in points.tolist()]
            else:
                lines = [f"{x!r} {y!r} {z!r} {int(l)}" for (x, y, z), l in zip(points.tolist(), labels.tolist())]
            if triangles is not None:
                lines += [f"3 {a} {b} {c}" for a, b, c in np.asarray(triangles).tolist()]
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))


# ---------------------------------------------------------------- OFF


def _off_tokens(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if text:
                yield lineno, text.split()


def read_off(path) -> TriangleMesh:
    lines = _off_tokens(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise FormatError(f"{path}: empty file") from None
    if head[0] != "OFF":
        raise FormatError(f"{path}:{lineno}: missing OFF header")
    counts = head[1:]
    if not counts:
        lineno, counts = next(lines)
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise FormatError(f"{path}:{lineno}: malformed counts line") from None
    verts, tris = [], []
    for _ in range(nv):
        lineno, vals = next(lines, (None, None))
        if vals is None:
            raise FormatError(f"{path}: expected {nv} vertices")
        try:
            verts.append([float(v) for v in vals[:3]])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed vertex line") from None
    for _ in range(nf):
        lineno, vals = next(lines, (None, None))
        if vals is None:
            raise FormatError(f"{path}: expected {nf} faces")
        try:
            n = int(vals[0])
            idx = [int(v) for v in vals[1 : 1 + n]]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed face line") from None
        if n < 3 or len(idx) != n:
            raise FormatError(f"{path}:{lineno}: malformed face line")
        tris.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, n - 1))
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_off(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.triangles.tolist():
            fh.write(f"3 {a} {b} {c}\n")


# ---------------------------------------------------------------- dispatch


def read_point_cloud(path, fmt: str | None = None) -> PointCloud:
    fmt = _format_of(path, fmt)
    if fmt == "xyz":
        return read_xyz(path)
    if fmt == "ply":
        pts, labels, _ = read_ply(path)
        return PointCloud(pts, labels)
    if fmt == "off":
        return PointCloud(read_off(path).vertices)
    raise FormatError(f"unsupported point-cloud format {fmt}")


def write_point_cloud(path, cloud: PointCloud, fmt: str | None = None, binary: bool = False) -> None:
    fmt = _format_of(path, fmt)
    if fmt == "xyz":
        write_xyz(path, cloud)
    elif fmt == "ply":
        write_ply(path, cloud.points, cloud.labels, binary=binary)
    else:
        raise FormatError(f"unsupported point-cloud format {fmt}")


def read_mesh(path, fmt: str | None = None) -> TriangleMesh:
    fmt = _format_of(path, fmt)
    if fmt == "off":
        return read_off(path)
    if fmt == "ply":
        pts, _, tris = read_ply(path)
        return TriangleMesh(pts, tris if tris is not None else np.empty((0, 3), dtype=np.int64))
    raise FormatError(f"unsupported mesh format {fmt}")


def write_mesh(path, mesh: TriangleMesh, fmt: str | None = None, binary: bool = False) -> None:
    fmt = _format_of(path, fmt)
    if fmt == "off":
        write_off(path, mesh)
    elif fmt == "ply":
        write_ply(path, mesh.vertices, triangles=mesh.triangles, binary=binary)
    else:
        raise FormatError(f"unsupported mesh format {fmt}")


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
