"""Legacy ASCII VTK writers for meshes, fields, and cut-cell debug dumps."""

from __future__ import annotations

import numpy as np

_CELL_TYPES = {3: 5, 4: 9, 2: 3}  # triangle, quad, line


def _fmt(x):
    return f"{float(x):.17g}"


def write_unstructured_grid(path, points, cells, point_data=None):
    """Write points + mixed cells (lists of node-id tuples) with point data.

    point_data maps name -> (N,) scalar or (N, 2) vector array; 2D vectors are
    padded with a zero third component.
    """
    points = np.asarray(points, dtype=float)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\nhybridfsi output\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            z = p[2] if len(p) > 2 else 0.0
            f.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(z)}\n")
        total = sum(len(c) + 1 for c in cells)
        f.write(f"CELLS {len(cells)} {total}\n")
        for c in cells:
            f.write(" ".join(str(int(i)) for i in (len(c), *c)) + "\n")
        f.write(f"CELL_TYPES {len(cells)}\n")
        for c in cells:
            f.write(f"{_CELL_TYPES[len(c)]}\n")
        if point_data:
            f.write(f"POINT_DATA {len(points)}\n")
            for name, arr in point_data.items():
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(f"{_fmt(v)}\n")
                else:
                    f.write(f"VECTORS {name} double\n")
                    for v in arr:
                        f.write(f"{_fmt(v[0])} {_fmt(v[1])} 0\n")


def write_mesh(path, mesh, point_data=None, coords=None):
    pts = mesh.node_coords if coords is None else coords
    write_unstructured_grid(path, pts, [tuple(e) for e in mesh.elements], point_data)


def write_polydata_lines(path, points, lines):
    """Polyline debug dump (e.g. interface segments)."""
    points = np.asarray(points, dtype=float)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\nhybridfsi debug\nASCII\n")
        f.write("DATASET POLYDATA\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            f.write(f"{_fmt(p[0])} {_fmt(p[1])} 0\n")
        total = sum(len(l) + 1 for l in lines)
        f.write(f"LINES {len(lines)} {total}\n")
        for l in lines:
            f.write(" ".join(str(int(i)) for i in (len(l), *l)) + "\n")
