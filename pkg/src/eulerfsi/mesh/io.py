"""Plain-text mesh format and legacy VTK output."""
from __future__ import annotations

import numpy as np

from .core import EDGE_LABELS, REGION_NAMES, Mesh, SizingSpec

_FMT = "{:.17g}"


def write_mesh_text(mesh, path):
    """Write ``mesh`` as three id-based sections (plus optional metadata).

    Coordinates carry 17 significant digits so the round trip is exact.
    """
    ids = mesh.vertex_ids
    lines = [f"vertices {mesh.n_vertices}"]
    for i, (x, y) in zip(ids, mesh.vertices):
        lines.append(f"{i} {_FMT.format(x)} {_FMT.format(y)}")
    lines.append(f"triangles {mesh.n_triangles}")
    for k, (t, r) in enumerate(zip(mesh.triangles, mesh.regions)):
        a, b, c = ids[t]
        lines.append(f"{k} {a} {b} {c} {REGION_NAMES[r]}")
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    for (a, b), lab in zip(mesh.boundary_edges, mesh.edge_labels):
        lines.append(f"{ids[a]} {ids[b]} {EDGE_LABELS[lab]}")
    if mesh.sizing is not None:
        s = mesh.sizing
        lines.append(f"sizing {_FMT.format(s.h_min)} {_FMT.format(s.h_max)} {_FMT.format(s.grade)}")
        lines.append("feature_ids " + " ".join(str(i) for i in s.feature_ids))
    for key in ("tip_id", "next_id"):
        if key in mesh.meta:
            lines.append(f"{key} {int(mesh.meta[key])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh_text(path):
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    pos = 0

    def header(name):
        nonlocal pos
        tok = lines[pos]
        if tok[0] != name:
            raise ValueError(f"expected section '{name}', found '{tok[0]}'")
        pos += 1
        return int(tok[1])

    n = header("vertices")
    rows = lines[pos:pos + n]
    pos += n
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    verts = np.array([[float(r[1]), float(r[2])] for r in rows])
    index = {int(v): i for i, v in enumerate(ids)}
    m = header("triangles")
    rows = lines[pos:pos + m]
    pos += m
    tri = np.array([[index[int(x)] for x in r[1:4]] for r in rows], dtype=np.int64).reshape(-1, 3)
    regions = np.array([REGION_NAMES.index(r[4]) for r in rows], dtype=np.int8)
    k = header("boundary_edges")
    rows = lines[pos:pos + k]
    pos += k
    edges = np.array([[index[int(r[0])], index[int(r[1])]] for r in rows], dtype=np.int64).reshape(-1, 2)
    labels = np.array([EDGE_LABELS.index(r[2]) for r in rows], dtype=np.int8)
    sizing = None
    meta = {}
    while pos < len(lines):
        tok = lines[pos]
        pos += 1
        if tok[0] == "sizing":
            h_min, h_max, grade = map(float, tok[1:4])
            fid = tuple(int(x) for x in lines[pos][1:])
            pos += 1
            sizing = SizingSpec(h_min, grade, h_max, fid)
        elif tok[0] in ("tip_id", "next_id"):
            meta[tok[0]] = int(tok[1])
        else:
            raise ValueError(f"unknown section '{tok[0]}'")
    return Mesh(vertices=verts, triangles=tri, regions=regions, boundary_edges=edges,
                edge_labels=labels, vertex_ids=ids, sizing=sizing, meta=meta)


def write_vtk(path, mesh, point_data=None, cell_data=None, title="eulerfsi"):
    """Legacy ASCII VTK unstructured grid of triangles.

    ``point_data`` / ``cell_data`` map names to arrays of shape (n,) for
    scalars or (n, 2) for vectors (written with a zero z component).
    """
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_vertices} double"]
    out += [f"{_FMT.format(x)} {_FMT.format(y)} 0" for x, y in mesh.vertices]
    m = mesh.n_triangles
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m
    for kind, data, n in (("POINT_DATA", point_data, mesh.n_vertices), ("CELL_DATA", cell_data, m)):
        if not data:
            continue
        out.append(f"{kind} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"{name}: expected {n} values, got {arr.shape[0]}")
            if arr.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out += [_FMT.format(v) for v in arr]
            else:
                out.append(f"VECTORS {name} double")
                out += [f"{_FMT.format(a)} {_FMT.format(b)} 0" for a, b in arr[:, :2]]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
