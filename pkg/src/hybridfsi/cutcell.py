"""Intersection of the background mesh with an embedded boundary polyline.

Classifies background elements against the closed cutter polygon, builds
physical-region quadrature on cut elements, 1D quadrature along the embedded
interface, the ghost-penalty facet set, and the active-node map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Point, Polygon, box
from shapely.strtree import STRtree

from .errors import GeometryError

ACTIVE, CUT, VOID = 0, 1, 2

_GAUSS_1D = {
    1: (np.array([0.0]), np.array([2.0])),
    2: (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0])),
    3: (np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]),
        np.array([5.0, 8.0, 5.0]) / 9.0),
}

# Symmetric triangle rules in barycentric coordinates, weights sum to 1.
_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6],
                  [1 / 6, 2 / 3, 1 / 6],
                  [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
}


@dataclass(frozen=True)
class InterfaceSegment:
    """One straight interface sub-segment inside a single cut element."""

    p0: np.ndarray
    p1: np.ndarray
    elem: int            # owning CUT background element
    facet_id: int        # index of the originating cutter edge
    points: np.ndarray   # (q, 2) physical gauss points
    weights: np.ndarray  # (q,) weights summing to segment length
    normal: np.ndarray   # unit normal pointing into the cutter interior

    @property
    def length(self):
        return float(np.linalg.norm(self.p1 - self.p0))


@dataclass(frozen=True)
class CutState:
    """Immutable result of cutting the background mesh with one polyline."""

    classification: np.ndarray            # (E,) in {ACTIVE, CUT, VOID}
    volume_quadrature: dict               # CUT elem -> (points (n,2), weights)
    interface_quadrature: tuple           # InterfaceSegment entries
    gp_facets: np.ndarray                 # interior facet ids in the jump set
    active_nodes: np.ndarray              # (N,) bool
    perturbation_log: tuple = field(default=())
    cutter: np.ndarray = None             # perturbed closed cutter polyline

    def cut_elements(self):
        return np.flatnonzero(self.classification == CUT)

    def physical_area(self, mesh):
        areas = mesh.element_areas()
        total = areas[self.classification == ACTIVE].sum()
        for pts, wts in self.volume_quadrature.values():
            total += wts.sum()
        return float(total)


def _validate_cutter(cutter):
    pts = np.asarray(cutter, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise GeometryError("cutter must be a closed polyline of >= 3 points")
    if not np.allclose(pts[0], pts[-1]):
        raise GeometryError("cutter polyline is not closed")
    pts = pts[:-1]
    edges = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    scale = np.abs(pts).max() + 1.0
    if np.any(np.linalg.norm(edges, axis=1) < 1e-14 * scale):
        raise GeometryError("cutter has a zero-length edge")
    poly = Polygon(pts)
    if not poly.is_valid:
        raise GeometryError("cutter polyline is degenerate or self-intersecting")
    # Normalize to CCW so the left edge normal points into the interior.
    x, y = pts[:, 0], pts[:, 1]
    signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if signed < 0:
        pts = pts[::-1]
    return pts


def _vertex_normals(pts):
    """Outward unit normal at each vertex of a CCW polygon (edge bisector)."""
    edges = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    edges /= np.linalg.norm(edges, axis=1)[:, None]
    # Right normal of a CCW edge points outward.
    edge_n = np.column_stack([edges[:, 1], -edges[:, 0]])
    vn = edge_n + np.roll(edge_n, 1, axis=0)
    norms = np.linalg.norm(vn, axis=1)
    norms[norms < 1e-14] = 1.0
    return vn / norms[:, None]


def perturb_cutter(mesh, cutter_pts, h):
    """Push cutter vertices that graze background nodes or edges.

    Vertices within 1e-12*h of a background node or facet line are moved
    1e-10*h along the outward vertex normal. Returns (points, log of moved
    vertex indices).
    """
    pts = cutter_pts.copy()
    tol = 1e-12 * h
    segs = []
    for a, b, *_ in mesh.interior_facets:
        segs.append(LineString([mesh.node_coords[a], mesh.node_coords[b]]))
    for a, b, _ in mesh.boundary_facets:
        segs.append(LineString([mesh.node_coords[a], mesh.node_coords[b]]))
    tree = STRtree(segs) if segs else None
    normals = _vertex_normals(pts)
    moved = []
    for i, p in enumerate(pts):
        close = False
        if tree is not None:
            for j in tree.query(Point(p).buffer(2 * tol)):
                if segs[j].distance(Point(p)) < tol:
                    close = True
                    break
        if close:
            pts[i] = p + 1e-10 * h * normals[i]
            moved.append(i)
    return pts, tuple(moved)


def _split_holes(poly):
    """Split a polygon with holes into hole-free pieces by vertical lines."""
    if not poly.interiors:
        return [poly]
    cx = poly.interiors[0].centroid.x
    minx, miny, maxx, maxy = poly.bounds
    pad = (maxx - minx) + (maxy - miny) + 1.0
    left = poly.intersection(box(minx - pad, miny - pad, cx, maxy + pad))
    right = poly.intersection(box(cx, miny - pad, maxx + pad, maxy + pad))
    out = []
    for part in (left, right):
        out.extend(_split_holes(g) for g in _as_polygons(part))
    return [p for sub in out for p in sub]


def _as_polygons(geom):
    if geom.is_empty:
        return []
    if geom.geom_type == "Polygon":
        return [geom]
    if geom.geom_type in ("MultiPolygon", "GeometryCollection"):
        return [g for g in geom.geoms if g.geom_type == "Polygon" and g.area > 0]
    return []


def clip_element(elem_polygon, cutter):
    """Part of a convex element lying outside the closed cutter polyline.

    Returns a list of simple CCW vertex arrays partitioning the exterior part.
    """
    elem = Polygon(np.asarray(elem_polygon, dtype=float))
    cut = Polygon(_validate_cutter(cutter))
    diff = elem.difference(cut)
    polys = []
    for g in _as_polygons(diff):
        for piece in _split_holes(g):
            ext = np.asarray(piece.exterior.coords)[:-1]
            x, y = ext[:, 0], ext[:, 1]
            if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
                ext = ext[::-1]
            polys.append(ext)
    return polys


def _ear_clip(pts):
    """Triangulate a simple CCW polygon by ear clipping; returns index triples."""
    n = len(pts)
    if n < 3:
        return []
    idx = list(range(n))
    tris = []
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300)
    eps = 1e-14 * scale * scale
    guard = 0
    while len(idx) > 3 and guard < 10 * n * n:
        guard += 1
        m = len(idx)
        clipped = False
        for k in range(m):
            i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
            a, b, c = pts[i0], pts[i1], pts[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= eps:
                continue  # reflex or degenerate corner
            # Any other vertex inside this candidate ear blocks it.
            blocked = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = pts[j]
                d0 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                d1 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
                d2 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
                if d0 >= -eps and d1 >= -eps and d2 >= -eps:
                    blocked = True
                    break
            if not blocked:
                tris.append((i0, i1, i2))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            # Only degenerate (zero-area) corners remain; drop the flattest.
            best, bestv = 0, np.inf
            for k in range(m):
                i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
                a, b, c = pts[i0], pts[i1], pts[i2]
                v = abs((b[0] - a[0]) * (c[1] - a[1])
                        - (b[1] - a[1]) * (c[0] - a[0]))
                if v < bestv:
                    best, bestv = k, v
            idx.pop(best)
    if len(idx) == 3:
        tris.append(tuple(idx))
    return tris


def triangulate_and_weight(polygons, order=2, min_area=0.0):
    """Gauss quadrature over a list of simple polygons.

    Triangulates each polygon and places a symmetric triangle rule of the
    requested order on every triangle. Polygons below min_area are dropped.
    Returns (points (n,2), weights (n,)); weights sum to the total area.
    """
    bary, wts = _TRI_RULES[order]
    all_pts, all_wts = [], []
    for poly in polygons:
        pts = np.asarray(poly, dtype=float)
        x, y = pts[:, 0], pts[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        if area < min_area:
            continue
        for i0, i1, i2 in _ear_clip(pts):
            a, b, c = pts[i0], pts[i1], pts[i2]
            ta = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1])
                           - (b[1] - a[1]) * (c[0] - a[0]))
            if ta == 0.0:
                continue
            all_pts.append(bary @ np.vstack([a, b, c]))
            all_wts.append(wts * ta)
    if not all_pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(all_pts), np.concatenate(all_wts)


def _element_polygons(mesh):
    coords = mesh.element_coords()
    return [Polygon(c) for c in coords]


def interface_segments(mesh, cutter, order=2, classification=None,
                       elem_polys=None, tree=None):
    """Split cutter edges at background element boundaries with 1D quadrature.

    Each sub-segment carries its owning CUT element, the cutter edge it came
    from, gauss points of the requested order, and the unit normal pointing
    into the cutter interior. Sub-segments outside the mesh are dropped.
    """
    pts = _validate_cutter(cutter)
    if elem_polys is None:
        elem_polys = _element_polygons(mesh)
    if tree is None:
        tree = STRtree(elem_polys)
    if classification is None:
        classification = _classify(mesh, Polygon(pts), elem_polys, tree)
    h = float(np.mean(mesh.element_diameters()))
    xi, wxi = _GAUSS_1D[order]
    segments = []
    n_edges = len(pts)
    for e in range(n_edges):
        p0, p1 = pts[e], pts[(e + 1) % n_edges]
        edge = LineString([p0, p1])
        d = p1 - p0
        elen = np.linalg.norm(d)
        t = d / elen
        normal = np.array([-t[1], t[0]])  # left of travel = cutter interior
        # Collect split parameters where the edge crosses element boundaries.
        params = {0.0, 1.0}
        for j in tree.query(edge):
            inter = edge.intersection(elem_polys[j].exterior)
            for g in getattr(inter, "geoms", [inter]):
                if g.is_empty:
                    continue
                for q in np.asarray(g.coords):
                    params.add(float(np.dot(q - p0, t)) / elen)
        tvals = np.array(sorted(s for s in params if -1e-12 <= s <= 1 + 1e-12))
        for ta, tb in zip(tvals[:-1], tvals[1:]):
            slen = (tb - ta) * elen
            if slen < 1e-12 * h:
                continue
            a = p0 + ta * d
            b = p0 + tb * d
            mid = 0.5 * (a + b)
            owner = _locate_owner(mid, normal, h, classification, elem_polys,
                                  tree)
            if owner is None:
                continue
            gp = mid[None, :] + 0.5 * slen * xi[:, None] * t[None, :]
            gw = 0.5 * slen * wxi
            segments.append(InterfaceSegment(a, b, owner, e, gp, gw,
                                             normal.copy()))
    return tuple(segments)


def _locate_owner(mid, normal, h, classification, elem_polys, tree):
    """CUT element owning an interface point; probes into the physical side."""
    for shift in (0.0, 1e-8 * h, 1e-6 * h):
        p = Point(mid - shift * normal)
        best = None
        for j in tree.query(p):
            if elem_polys[j].distance(p) < 1e-12 * h:
                if classification[j] == CUT:
                    return int(j)
                best = int(j) if best is None else best
        if shift == 0.0 and best is None:
            return None  # outside the background mesh
    return None


def _classify(mesh, cutter_poly, elem_polys, tree):
    areas = mesh.element_areas()
    cls = np.full(mesh.n_elements, ACTIVE, dtype=int)
    for j in tree.query(cutter_poly):
        a = elem_polys[j].intersection(cutter_poly).area
        if a <= 1e-14 * areas[j]:
            continue
        cls[j] = VOID if a >= (1.0 - 1e-12) * areas[j] else CUT
    return cls


def classify_and_cut(mesh, cutter, order=2, perturb=True):
    """Cut the background mesh with a closed polyline.

    Elements fully inside the cutter become VOID, fully outside ACTIVE,
    straddling CUT with clipped quadrature over the exterior part. Interface
    normals point from the exterior region into the cutter interior.
    """
    pts = _validate_cutter(cutter)
    h = float(np.mean(mesh.element_diameters()))
    log = ()
    if perturb:
        pts, log = perturb_cutter(mesh, pts, h)
    cutter_poly = Polygon(pts)
    if not cutter_poly.is_valid:
        raise GeometryError("cutter degenerate after perturbation")
    elem_polys = _element_polygons(mesh)
    tree = STRtree(elem_polys)
    cls = _classify(mesh, cutter_poly, elem_polys, tree)

    closed = np.vstack([pts, pts[:1]])
    volume = {}
    coords = mesh.element_coords()
    diams = mesh.element_diameters()
    for e in np.flatnonzero(cls == CUT):
        polys = clip_element(coords[e], closed)
        qp, qw = triangulate_and_weight(polys, order,
                                        min_area=1e-14 * diams[e] ** 2)
        if np.any(qw < 0):
            raise GeometryError(f"negative cut-cell weight in element {e}")
        volume[int(e)] = (qp, qw)

    segs = interface_segments(mesh, closed, order=order, classification=cls,
                              elem_polys=elem_polys, tree=tree)

    gp = [i for i, (a, b, el, er) in enumerate(mesh.interior_facets)
          if (cls[el] == CUT or cls[er] == CUT)
          and cls[el] != VOID and cls[er] != VOID]

    active = np.zeros(mesh.n_nodes, dtype=bool)
    for e in np.flatnonzero(cls != VOID):
        active[mesh.elements[e]] = True

    return CutState(cls, volume, segs, np.array(gp, dtype=int), active, log,
                    cutter=closed)


def uncut_state(mesh):
    """CutState for a mesh with no embedded boundary: everything active."""
    return CutState(np.full(mesh.n_elements, ACTIVE, dtype=int), {}, (),
                    np.zeros(0, dtype=int), np.ones(mesh.n_nodes, dtype=bool))


def write_cut_debug(path_prefix, mesh, state):
    """ASCII VTK dumps of the cut-cell quadrature and interface segments."""
    from .vtkio import write_mesh, write_polydata_lines

    cls = state.classification.astype(float)
    nodal = np.zeros(mesh.n_nodes)
    for e in range(mesh.n_elements):
        nodal[mesh.elements[e]] = np.maximum(nodal[mesh.elements[e]], cls[e])
    write_mesh(f"{path_prefix}_classification.vtk", mesh,
               point_data={"classification": nodal,
                           "active": state.active_nodes.astype(float)})
    if state.interface_quadrature:
        pts = []
        lines = []
        for s in state.interface_quadrature:
            lines.append((len(pts), len(pts) + 1))
            pts.extend([s.p0, s.p1])
        write_polydata_lines(f"{path_prefix}_interface.vtk",
                             np.asarray(pts), lines)
