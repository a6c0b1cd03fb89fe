"""ASCII XYZ / PLY / OBJ readers and writers.

Floats are written with 17 significant digits so a save/load round trip
reproduces every float64 bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .geometry import OrientedPointSet, TriangleMesh

_FMT = "%.17g"


def _fmt_rows(arr) -> str:
    arr = np.atleast_2d(arr)
    return "".join(" ".join(_FMT % v for v in row) + "\n" for row in arr)


def save_xyz(cloud, path) -> None:
    x = np.asarray(cloud, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument("cloud must be a 2-d array")
    Path(path).write_text(_fmt_rows(x) if len(x) else "")


def load_xyz(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                vals = [float(t) for t in s.replace(",", " ").split()]
            except ValueError:
                raise FormatError(f"cannot parse numbers in {s!r}", path, lineno) from None
            if width is None:
                width = len(vals)
                if width not in (2, 3):
                    raise FormatError(f"expected 2 or 3 columns, got {width}", path, lineno)
            elif len(vals) != width:
                raise FormatError(f"expected {width} columns, got {len(vals)}", path, lineno)
            rows.append(vals)
    if not rows:
        raise FormatError("file contains no points", path)
    return np.array(rows, dtype=np.float64)


def save_ply(path, points, normals=None, loglik=None) -> None:
    pts = np.asarray(points, dtype=np.float64)
    n, d = pts.shape
    names = ["x", "y", "z"][:d]
    cols = [pts]
    if normals is not None:
        names += ["nx", "ny", "nz"][:d]
        cols.append(np.asarray(normals, dtype=np.float64))
    if loglik is not None:
        names.append("loglik")
        cols.append(np.asarray(loglik, dtype=np.float64)[:, None])
    head = ["ply", "format ascii 1.0", f"element vertex {n}"]
    head += [f"property double {name}" for name in names]
    head.append("end_header")
    body = _fmt_rows(np.concatenate(cols, axis=1)) if n else ""
    Path(path).write_text("\n".join(head) + "\n" + body)


def load_ply(path) -> dict[str, np.ndarray]:
    """Read an ASCII PLY vertex element into a dict of named columns."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", path, 1)
    names, n_vertex, in_vertex = [], None, False
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise FormatError("only ASCII PLY is supported", path, i)
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            names.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i
            break
    if body_start is None or n_vertex is None:
        raise FormatError("incomplete PLY header", path)
    rows = []
    lineno = body_start
    for line in lines[body_start:]:
        lineno += 1
        if len(rows) == n_vertex:
            break
        s = line.strip()
        if not s:
            continue
        try:
            vals = [float(t) for t in s.split()]
        except ValueError:
            raise FormatError(f"cannot parse numbers in {s!r}", path, lineno) from None
        if len(vals) < len(names):
            raise FormatError(f"expected {len(names)} values, got {len(vals)}", path, lineno)
        rows.append(vals[:len(names)])
    if len(rows) != n_vertex:
        raise FormatError(f"expected {n_vertex} vertices, found {len(rows)}", path)
    data = np.array(rows, dtype=np.float64).reshape(n_vertex, len(names))
    return {name: data[:, j] for j, name in enumerate(names)}


def _ply_points(cols, path):
    keys = [k for k in ("x", "y", "z") if k in cols]
    if len(keys) < 2:
        raise FormatError("PLY lacks x/y coordinates", path)
    return np.stack([cols[k] for k in keys], axis=1)


def save_oriented_ply(ops: OrientedPointSet, path) -> None:
    save_ply(path, ops.points, ops.normals, ops.loglik)


def load_oriented_ply(path) -> OrientedPointSet:
    cols = load_ply(path)
    if not all(k in cols for k in ("nx", "ny", "nz")):
        raise FormatError("PLY has no nx/ny/nz properties", path)
    pts = _ply_points(cols, path)
    normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1)
    loglik = cols.get("loglik", np.zeros(len(pts)))
    return OrientedPointSet(pts, normals, loglik)


def save_cloud(cloud, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        save_ply(path, cloud)
    elif suffix in (".xyz", ".txt"):
        save_xyz(cloud, path)
    else:
        raise InvalidArgument(f"unsupported point-cloud extension {suffix!r}")


def load_cloud(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    suffix = p.suffix.lower()
    if suffix == ".ply":
        return _ply_points(load_ply(p), str(p))
    if suffix in (".xyz", ".txt"):
        return load_xyz(p)
    raise InvalidArgument(f"unsupported point-cloud extension {suffix!r}")


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = ["v " + " ".join(_FMT % c for c in v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(f + 1) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(t) for t in tok[1:4]])
                elif tok[0] == "f":
                    faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
            except ValueError:
                raise FormatError(f"malformed record {line.strip()!r}", path, lineno) from None
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
