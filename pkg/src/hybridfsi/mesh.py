"""2D bilinear quadrilateral meshes and structured generators.

All meshes share one container, `QuadMesh`, holding node coordinates,
counterclockwise element connectivity, and the interior/boundary facet
tables needed by ghost-penalty assembly and interface extraction.
Meshes are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError


@dataclass(frozen=True)
class QuadMesh:
    """Immutable 2D quad mesh.

    node_coords : (N, 2) float
    elements    : (E, 4) int, counterclockwise
    interior_facets : (F, 4) int rows (node_a, node_b, elem_left, elem_right);
        the facet normal (90 deg clockwise rotation of b-a) points away from
        elem_left.
    boundary_facets : (B, 3) int rows (node_a, node_b, elem), oriented so the
        normal points out of the mesh; tags in `boundary_tags` (one per row).
    """

    node_coords: np.ndarray
    elements: np.ndarray
    interior_facets: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: tuple
    node_sets: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_coords(self, elems=None):
        """(E, 4, 2) corner coordinates, optionally for a subset of elements."""
        if elems is None:
            return self.node_coords[self.elements]
        return self.node_coords[self.elements[elems]]

    def element_areas(self):
        c = self.element_coords()
        x, y = c[:, :, 0], c[:, :, 1]
        xr, yr = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yr - xr * y, axis=1)

    def element_diameters(self):
        c = self.element_coords()
        d02 = np.linalg.norm(c[:, 2] - c[:, 0], axis=1)
        d13 = np.linalg.norm(c[:, 3] - c[:, 1], axis=1)
        return np.maximum(d02, d13)

    def boundary_facets_for(self, tag):
        idx = [i for i, t in enumerate(self.boundary_tags) if t == tag]
        return np.asarray(idx, dtype=int)

    def with_coords(self, coords):
        """Same topology on displaced coordinates (used by the ALE patch)."""
        return QuadMesh(
            node_coords=np.asarray(coords, dtype=float),
            elements=self.elements,
            interior_facets=self.interior_facets,
            boundary_facets=self.boundary_facets,
            boundary_tags=self.boundary_tags,
            node_sets=self.node_sets,
        )


def _build_facets(elements, tag_of_boundary_facet):
    """Derive interior and boundary facet tables from connectivity.

    tag_of_boundary_facet(node_a, node_b, elem) -> str assigns boundary tags.
    """
    edge_map = {}
    for e, conn in enumerate(elements):
        for k in range(4):
            a, b = int(conn[k]), int(conn[(k + 1) % 4])
            key = (min(a, b), max(a, b))
            edge_map.setdefault(key, []).append((a, b, e))
    interior = []
    boundary = []
    tags = []
    for key in sorted(edge_map):
        owners = edge_map[key]
        if len(owners) == 2:
            # Keep the orientation of the first element; it traverses a->b in
            # CCW order, so the facet normal (cw rotation of b-a) points from
            # the first owner (left) into the second (right).
            (a, b, e1), (_, _, e2) = owners
            interior.append((a, b, e1, e2))
        elif len(owners) == 1:
            a, b, e = owners[0]
            boundary.append((a, b, e))
            tags.append(tag_of_boundary_facet(a, b, e))
        else:
            raise GeometryError(f"facet {key} shared by {len(owners)} elements")
    interior = np.asarray(interior, dtype=int).reshape(-1, 4)
    boundary = np.asarray(boundary, dtype=int).reshape(-1, 3)
    return interior, boundary, tuple(tags)


def _check_positive_jacobians(coords, elements):
    c = coords[elements]
    # Corner Jacobian of the bilinear map has det proportional to the cross
    # product of adjacent edge vectors at that corner.
    for k in range(4):
        p = c[:, k]
        e1 = c[:, (k + 1) % 4] - p
        e2 = c[:, (k - 1) % 4] - p
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0.0):
            bad = int(np.argmin(det))
            raise GeometryError(f"element {bad} has non-positive corner Jacobian")


def generate_structured_rect(origin, extent, nx, ny):
    """Structured nx-by-ny quad mesh of an axis-aligned rectangle.

    Boundary facets are tagged left/right/bottom/top.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ConfigurationError("nx and ny must be >= 1")
    ox, oy = float(origin[0]), float(origin[1])
    lx, ly = float(extent[0]), float(extent[1])
    if lx <= 0.0 or ly <= 0.0:
        raise ConfigurationError("extent components must be positive")

    xs = ox + lx * np.arange(nx + 1) / nx
    ys = oy + ly * np.arange(ny + 1) / ny
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    coords = np.column_stack([xx.ravel(), yy.ravel()])
    nid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)

    elements = np.empty((nx * ny, 4), dtype=int)
    e = 0
    for i in range(nx):
        for j in range(ny):
            elements[e] = (nid[i, j], nid[i + 1, j], nid[i + 1, j + 1], nid[i, j + 1])
            e += 1

    tol = 1e-12 * max(lx, ly)

    def tag(a, b, elem):
        pa, pb = coords[a], coords[b]
        if abs(pa[0] - ox) < tol and abs(pb[0] - ox) < tol:
            return "left"
        if abs(pa[0] - ox - lx) < tol and abs(pb[0] - ox - lx) < tol:
            return "right"
        if abs(pa[1] - oy) < tol and abs(pb[1] - oy) < tol:
            return "bottom"
        return "top"

    interior, boundary, tags = _build_facets(elements, tag)
    node_sets = {
        "left": nid[0, :].copy(),
        "right": nid[-1, :].copy(),
        "bottom": nid[:, 0].copy(),
        "top": nid[:, -1].copy(),
    }
    return QuadMesh(coords, elements, interior, boundary, tags, node_sets)


def _radial_layers(r_inner, r_outer, n_radial, grading):
    """Layer boundary radii; thickness ratio outermost/innermost = grading."""
    if n_radial == 1 or grading == 1.0:
        return np.linspace(r_inner, r_outer, n_radial + 1)
    q = grading ** (1.0 / (n_radial - 1))
    t = q ** np.arange(n_radial)
    t *= (r_outer - r_inner) / t.sum()
    return r_inner + np.concatenate([[0.0], np.cumsum(t)])


def generate_annulus_patch(center, r_inner, r_outer, n_circum, n_radial,
                           grading=1.0, theta0=0.0):
    """Closed annulus of n_circum x n_radial quads.

    Inner boundary facets are tagged "fsi", outer "ff". Radial layer
    thicknesses grow geometrically by `grading` (outermost/innermost).
    `theta0` rotates the angular node positions so the inner boundary can be
    made node-matching with a solid disc mesh.
    """
    n_circum, n_radial = int(n_circum), int(n_radial)
    if not (0.0 < r_inner < r_outer):
        raise ConfigurationError("need 0 < r_inner < r_outer")
    if n_circum < 8:
        raise ConfigurationError("n_circum must be >= 8")
    if n_radial < 1:
        raise ConfigurationError("n_radial must be >= 1")
    if grading <= 0.0:
        raise ConfigurationError("grading must be positive")

    cx, cy = float(center[0]), float(center[1])
    radii = _radial_layers(float(r_inner), float(r_outer), n_radial, float(grading))
    theta = theta0 + 2.0 * np.pi * np.arange(n_circum) / n_circum

    coords = np.empty(((n_radial + 1) * n_circum, 2))
    for j, r in enumerate(radii):
        coords[j * n_circum:(j + 1) * n_circum, 0] = cx + r * np.cos(theta)
        coords[j * n_circum:(j + 1) * n_circum, 1] = cy + r * np.sin(theta)

    elements = np.empty((n_radial * n_circum, 4), dtype=int)
    e = 0
    for j in range(n_radial):
        for k in range(n_circum):
            k1 = (k + 1) % n_circum
            elements[e] = (j * n_circum + k, (j + 1) * n_circum + k,
                           (j + 1) * n_circum + k1, j * n_circum + k1)
            e += 1

    def tag(a, b, elem):
        return "fsi" if max(a, b) < n_circum else "ff"

    interior, boundary, tags = _build_facets(elements, tag)
    node_sets = {
        "fsi": np.arange(n_circum),
        "ff": np.arange(n_radial * n_circum, (n_radial + 1) * n_circum),
    }
    _check_positive_jacobians(coords, elements)
    return QuadMesh(coords, elements, interior, boundary, tags, node_sets)


def generate_disc_mesh(center, r, n_circum, n_layers=None, theta0=None):
    """All-quad disc: square core block surrounded by ring layers.

    The boundary carries exactly n_circum nodes/segments; n_circum must be
    divisible by 4. Boundary node angles default to corner-aligned
    (theta0 = -3*pi/4) so a matching annulus can be generated with the same
    theta0.
    """
    n_circum = int(n_circum)
    if n_circum % 4 != 0:
        raise ConfigurationError(
            f"n_circum={n_circum} must be divisible by 4 for an all-quad disc")
    m = n_circum // 4
    if n_layers is None:
        n_layers = max(1, round(m / 2))
    if theta0 is None:
        theta0 = -3.0 * np.pi / 4.0
    cx, cy = float(center[0]), float(center[1])
    r = float(r)
    if r <= 0.0:
        raise ConfigurationError("radius must be positive")

    a = 0.5 * r  # core half-width
    nid = np.arange((m + 1) * (m + 1)).reshape(m + 1, m + 1)
    xs = np.linspace(-a, a, m + 1)
    core = np.empty(((m + 1) * (m + 1), 2))
    for i in range(m + 1):
        for j in range(m + 1):
            core[nid[i, j]] = (xs[i], xs[j])

    elements = []
    for i in range(m):
        for j in range(m):
            elements.append((nid[i, j], nid[i + 1, j], nid[i + 1, j + 1], nid[i, j + 1]))

    # CCW core boundary starting at corner (-a,-a): bottom, right, top, left.
    ring0 = []
    for i in range(m):
        ring0.append(nid[i, 0])
    for j in range(m):
        ring0.append(nid[m, j])
    for i in range(m, 0, -1):
        ring0.append(nid[i, m])
    for j in range(m, 0, -1):
        ring0.append(nid[0, j])
    ring0 = np.asarray(ring0, dtype=int)

    coords = [core]
    n_nodes = core.shape[0]
    theta = theta0 + 2.0 * np.pi * np.arange(n_circum) / n_circum
    rim = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    inner = core[ring0]
    prev_ring = ring0
    for layer in range(1, n_layers + 1):
        t = layer / n_layers
        pts = (1.0 - t) * inner + t * rim
        ring = np.arange(n_nodes, n_nodes + n_circum)
        coords.append(pts)
        n_nodes += n_circum
        for k in range(n_circum):
            k1 = (k + 1) % n_circum
            elements.append((prev_ring[k], ring[k], ring[k1], prev_ring[k1]))
        prev_ring = ring

    coords = np.vstack(coords) + np.array([cx, cy])
    elements = np.asarray(elements, dtype=int)
    boundary_nodes = prev_ring

    def tag(a_, b_, elem):
        return "surface"

    interior, boundary, tags = _build_facets(elements, tag)
    _check_positive_jacobians(coords, elements)
    node_sets = {"surface": boundary_nodes.copy()}
    return QuadMesh(coords, elements, interior, boundary, tags, node_sets)


def boundary_polyline(mesh, tag):
    """Ordered CCW closed node-id loop of one tagged boundary component.

    `tag` may be a single tag name, a sequence of tags whose facets together
    form one loop, or None for the whole boundary. The first id is repeated
    last. Raises GeometryError if the facets do not form exactly one loop.
    """
    if tag is None:
        rows = np.arange(len(mesh.boundary_facets))
    elif isinstance(tag, str):
        rows = mesh.boundary_facets_for(tag)
    else:
        rows = np.concatenate([mesh.boundary_facets_for(t) for t in tag])
    if rows.size == 0:
        raise GeometryError(f"no boundary facets tagged {tag!r}")
    facets = mesh.boundary_facets[rows]
    nxt = {}
    for a, b, _ in facets:
        if int(a) in nxt:
            raise GeometryError(f"tag {tag!r}: node {a} starts two facets")
        nxt[int(a)] = int(b)
    start = int(facets[0, 0])
    loop = [start]
    cur = start
    for _ in range(len(facets)):
        if cur not in nxt:
            raise GeometryError(f"tag {tag!r}: open polyline at node {cur}")
        cur = nxt[cur]
        loop.append(cur)
    if loop[-1] != start or len(loop) != len(facets) + 1:
        raise GeometryError(f"tag {tag!r}: facets form more than one loop")

    pts = mesh.node_coords[loop[:-1]]
    x, y = pts[:, 0], pts[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if area2 < 0.0:
        loop = loop[::-1]
    return loop


def polyline_coords(mesh, loop, displacement=None):
    """Coordinates of a node-id loop, optionally displaced (closed, CCW)."""
    pts = mesh.node_coords[loop]
    if displacement is not None:
        pts = pts + displacement[loop]
    return pts


def disc_layout_note(n_circum_requested, n_circum_used):
    """Run-log message for the boundary segment count deviation."""
    return (f"disc mesh: requested {n_circum_requested} boundary segments is "
            f"not divisible by 4; using {n_circum_used}")
