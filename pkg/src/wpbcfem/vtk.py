"""Legacy VTK ASCII (version 3.0) unstructured-grid I/O for triangles."""
from __future__ import annotations

import numpy as np

VTK_TRIANGLE = 5


def write_unstructured(path, points, triangles, point_data=None, cell_data=None,
                       title="wpbcfem"):
    """Write a triangle grid with real scalar point/cell fields.

    ``points`` may have two (x, z) or three columns; 2D points are written
    as ``(x, z, 0)``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    tri = np.asarray(triangles, dtype=np.int64)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(pts)} double\n")
        np.savetxt(f, pts, fmt="%.17g")
        f.write(f"CELLS {len(tri)} {4 * len(tri)}\n")
        np.savetxt(f, np.column_stack([np.full(len(tri), 3), tri]), fmt="%d")
        f.write(f"CELL_TYPES {len(tri)}\n")
        np.savetxt(f, np.full((len(tri), 1), VTK_TRIANGLE), fmt="%d")
        _write_fields(f, "POINT_DATA", len(pts), point_data)
        _write_fields(f, "CELL_DATA", len(tri), cell_data)


def _write_fields(f, kind, n, fields):
    if not fields:
        return
    f.write(f"{kind} {n}\n")
    for name, values in fields.items():
        values = np.asarray(values, dtype=float).ravel()
        if len(values) != n:
            raise ValueError(f"field {name!r} has {len(values)} values, expected {n}")
        f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        np.savetxt(f, values[:, None], fmt="%.17g")


def read_unstructured(path):
    """Parse a file written by :func:`write_unstructured`.

    Returns
    -------
    points : ndarray (n, 3)
    triangles : ndarray (m, 3)
    point_data, cell_data : dict[str, ndarray]
    """
    with open(path) as f:
        tokens = f.read().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ValueError("not a legacy VTK file")
    words = " ".join(tokens[2:]).split()
    k = 0
    points = triangles = None
    data = {"POINT_DATA": {}, "CELL_DATA": {}}
    section = None
    while k < len(words):
        w = words[k]
        if w == "POINTS":
            n = int(words[k + 1])
            points = np.array(words[k + 3:k + 3 + 3 * n], dtype=float).reshape(n, 3)
            k += 3 + 3 * n
        elif w == "CELLS":
            m, size = int(words[k + 1]), int(words[k + 2])
            cells = np.array(words[k + 3:k + 3 + size], dtype=np.int64).reshape(m, 4)
            triangles = cells[:, 1:]
            k += 3 + size
        elif w == "CELL_TYPES":
            m = int(words[k + 1])
            k += 2 + m
        elif w in data:
            section = w
            count = int(words[k + 1])
            k += 2
        elif w == "SCALARS":
            name = words[k + 1]
            k += 6  # SCALARS name type ncomp LOOKUP_TABLE default
            data[section][name] = np.array(words[k:k + count], dtype=float)
            k += count
        else:
            k += 1
    return points, triangles, data["POINT_DATA"], data["CELL_DATA"]
