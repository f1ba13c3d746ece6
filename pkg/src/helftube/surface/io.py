"""Mesh export and import: OFF and legacy-VTK polydata, both ASCII.

The periodic structure (pairs, boundary ring order, axial period, the
frozen reference area) does not fit either format, so it rides in a JSON
sidecar next to the mesh file: ``<file>.pairs.json``.  Loading without a
sidecar yields a closed-surface mesh with no pairs.
"""

import json
import os

import numpy as np

from .mesh import SurfaceMesh

_FMT = "%.17g"


def _sidecar_path(path):
    return str(path) + ".pairs.json"


def _write_sidecar(path, mesh):
    data = {
        "axial_period": mesh.axial_period,
        "inward": bool(mesh.inward),
        "ref_area": mesh.ref_area,
        "pairs": [[int(k), int(v)] for k, v in
                  sorted(mesh.periodic_pairs.items())],
        "left_ring": [int(v) for v in mesh.left_ring],
    }
    with open(_sidecar_path(path), "w") as f:
        json.dump(data, f)


def _read_sidecar(path):
    sc = _sidecar_path(path)
    if not os.path.exists(sc):
        return None
    with open(sc) as f:
        return json.load(f)


def _attach(path, verts, tris):
    meta = _read_sidecar(path)
    if meta is None:
        return SurfaceMesh(verts, tris, {}, 0.0)
    return SurfaceMesh(verts, tris,
                       {int(k): int(v) for k, v in meta["pairs"]},
                       float(meta["axial_period"]),
                       bool(meta.get("inward", True)),
                       np.array(meta["left_ring"], dtype=np.int64),
                       float(meta["ref_area"]))


def save_off(path, mesh):
    """ASCII OFF plus the periodic sidecar."""
    with open(path, "w") as f:
        f.write("OFF\n%d %d 0\n" % (mesh.n_vertices, mesh.n_triangles))
        for p in mesh.vertices:
            f.write((_FMT + " " + _FMT + " " + _FMT + "\n") % tuple(p))
        for t in mesh.triangles:
            f.write("3 %d %d %d\n" % tuple(t))
    _write_sidecar(path, mesh)


def load_off(path):
    with open(path) as f:
        tokens = []
        for line in f:
            line = line.split("#")[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise ValueError("not an OFF file: %s" % path)
    nv, nt = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64)
    verts = verts.reshape(nv, 3)
    pos += 3 * nv
    tris = np.empty((nt, 3), dtype=np.int64)
    for t in range(nt):
        cnt = int(tokens[pos])
        if cnt != 3:
            raise ValueError("only triangle faces are supported")
        tris[t] = [int(tokens[pos + 1]), int(tokens[pos + 2]),
                   int(tokens[pos + 3])]
        pos += 4
    return _attach(path, verts, tris)


def save_vtk(path, mesh, point_fields=None):
    """Legacy-VTK polydata with optional per-vertex scalar fields."""
    point_fields = point_fields or {}
    nv, nt = mesh.n_vertices, mesh.n_triangles
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("tube mesh\nASCII\nDATASET POLYDATA\n")
        f.write("POINTS %d double\n" % nv)
        for p in mesh.vertices:
            f.write((_FMT + " " + _FMT + " " + _FMT + "\n") % tuple(p))
        f.write("POLYGONS %d %d\n" % (nt, 4 * nt))
        for t in mesh.triangles:
            f.write("3 %d %d %d\n" % tuple(t))
        if point_fields:
            f.write("POINT_DATA %d\n" % nv)
            for name, values in point_fields.items():
                values = np.asarray(values, dtype=np.float64)
                if values.shape[0] == mesh.ndof:
                    values = mesh.expand(values)
                if values.shape[0] != nv:
                    raise ValueError("field %r has the wrong length" % name)
                f.write("SCALARS %s double 1\nLOOKUP_TABLE default\n" % name)
                for v in values:
                    f.write((_FMT + "\n") % v)
    _write_sidecar(path, mesh)


def load_vtk(path):
    """Read back the polydata dialect written by save_vtk.

    Returns (mesh, fields) with fields a dict of per-vertex arrays.
    """
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    i = 0

    def seek(prefix):
        nonlocal i
        while i < len(lines) and not lines[i].startswith(prefix):
            i += 1
        if i == len(lines):
            raise ValueError("missing %r section in %s" % (prefix, path))
        return lines[i]

    header = seek("POINTS").split()
    nv = int(header[1])
    i += 1
    vals = []
    while len(vals) < 3 * nv:
        vals.extend(lines[i].split())
        i += 1
    verts = np.array(vals, dtype=np.float64).reshape(nv, 3)
    header = seek("POLYGONS").split()
    nt = int(header[1])
    i += 1
    tris = np.empty((nt, 3), dtype=np.int64)
    for t in range(nt):
        parts = lines[i].split()
        if parts[0] != "3":
            raise ValueError("only triangle faces are supported")
        tris[t] = [int(parts[1]), int(parts[2]), int(parts[3])]
        i += 1
    fields = {}
    while i < len(lines):
        if lines[i].startswith("SCALARS"):
            name = lines[i].split()[1]
            i += 2                                    # skip LOOKUP_TABLE
            vals = []
            while len(vals) < nv:
                vals.extend(lines[i].split())
                i += 1
            fields[name] = np.array(vals, dtype=np.float64)
        else:
            i += 1
    return _attach(path, verts, tris), fields
