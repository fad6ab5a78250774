"""Bilinear quad basis, mappings, quadrature batches, dof maps, assembly scatter.

Quadrature is precomputed into flat point batches (one row per gauss point)
so residual and tangent assembly can run as vectorized einsum contractions
followed by a deterministic scatter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import AssemblyError, GeometryError

# Reference-node signs for the CCW corner ordering (-1,-1),(1,-1),(1,1),(-1,1).
_SX = np.array([-1.0, 1.0, 1.0, -1.0])
_SY = np.array([-1.0, -1.0, 1.0, 1.0])

_G1D = {
    1: (np.array([0.0]), np.array([2.0])),
    2: (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0])),
    3: (np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]),
        np.array([5.0, 8.0, 5.0]) / 9.0),
}


def shape_functions(xi):
    """Q1 values and reference gradients at points xi of shape (..., 2)."""
    xi = np.asarray(xi, dtype=float)
    a = 1.0 + _SX * xi[..., 0:1]
    b = 1.0 + _SY * xi[..., 1:2]
    N = 0.25 * a * b
    dN = np.stack([0.25 * _SX * b, 0.25 * _SY * a], axis=-1)
    return N, dN


def _mapping(coords, xi):
    """Jacobian data for element corner coords (..., 4, 2) at xi (..., 2)."""
    N, dN = shape_functions(xi)
    J = np.einsum("...ai,...aj->...ij", coords, dN)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 1, 1] = J[..., 0, 0]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    Jinv = inv / detJ[..., None, None]  # rows: dxi_j / dx_i with [j,i] layout
    return N, dN, J, detJ, Jinv


def eval_basis(mesh, elem, ref_point):
    """Basis values, physical gradients and metric data at one reference point."""
    coords = mesh.node_coords[mesh.elements[elem]]
    N, dN, J, detJ, Jinv = _mapping(coords, np.asarray(ref_point, dtype=float))
    if abs(detJ) < 1e-14:
        raise GeometryError(f"element {elem} degenerate (det J = {detJ:.3e})")
    dNdx = np.einsum("aj,ji->ai", dN, Jinv)
    G = np.einsum("jk,jl->kl", Jinv, Jinv)
    x = N @ coords
    return BasisSample(N, dNdx, float(detJ), G, x)


@dataclass(frozen=True)
class BasisSample:
    N: np.ndarray
    dNdx: np.ndarray
    detJ: float
    G: np.ndarray
    x: np.ndarray

    @property
    def trG(self):
        return float(np.trace(self.G))

    @property
    def GddG(self):
        return float(np.sum(self.G * self.G))


def metric_quantities(mesh, elem, ref_point):
    s = eval_basis(mesh, elem, ref_point)
    return s.G, s.trG, s.GddG


def inverse_map(coords, x, tol=1e-13, maxit=30):
    """Reference coordinates of physical points x inside bilinear elements.

    coords: (..., 4, 2) corner coordinates, x: (..., 2) physical points.
    """
    coords = np.asarray(coords, dtype=float)
    x = np.asarray(x, dtype=float)
    xi = np.zeros_like(x)
    scale = np.linalg.norm(np.ptp(coords, axis=-2), axis=-1) + 1e-300
    for _ in range(maxit):
        N, dN, J, detJ, Jinv = _mapping(coords, xi)
        r = np.einsum("...a,...ai->...i", N, coords) - x
        if np.all(np.linalg.norm(r, axis=-1) < tol * scale):
            break
        xi = xi - np.einsum("...i,...ji->...j", r, Jinv)
    return xi


class DofMap:
    """Node-major dof numbering for one field, skipping inactive nodes."""

    def __init__(self, n_nodes, n_comp, active=None):
        self.n_comp = int(n_comp)
        if active is None:
            active = np.ones(n_nodes, dtype=bool)
        self.active = np.asarray(active, dtype=bool)
        self.index = np.full(n_nodes, -1, dtype=int)
        self.index[self.active] = np.arange(int(self.active.sum()))
        self.n_dofs = int(self.active.sum()) * self.n_comp

    def dofs(self, nodes):
        """(len(nodes), n_comp) global dof ids; -1 rows mark inactive nodes."""
        idx = self.index[np.asarray(nodes)]
        out = idx[..., None] * self.n_comp + np.arange(self.n_comp)
        out[idx < 0] = -1
        return out

    def expand(self, values, fill=0.0):
        """Scatter a packed dof vector back to a (n_nodes, n_comp) array."""
        full = np.full((len(self.index), self.n_comp), fill)
        full[self.active] = values.reshape(-1, self.n_comp)
        return full

    def pack(self, nodal):
        return np.asarray(nodal)[self.active].reshape(-1)


class CooBuilder:
    """Deterministic sparse accumulator for block assembly."""

    def __init__(self, n_rows, n_cols):
        self.shape = (int(n_rows), int(n_cols))
        self._rows, self._cols, self._vals = [], [], []

    def add(self, rows, cols, values):
        """Scatter dense blocks: values[..., i, j] to (rows[..., i], cols[..., j])."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        values = np.asarray(values, dtype=float)
        r = np.broadcast_to(rows[..., :, None], values.shape).reshape(-1)
        c = np.broadcast_to(cols[..., None, :], values.shape).reshape(-1)
        if np.any(r < 0) or np.any(c < 0):
            raise AssemblyError("inactive dof referenced during scatter")
        self._rows.append(r)
        self._cols.append(c)
        self._vals.append(values.reshape(-1))

    def tocsr(self):
        if not self._rows:
            return sparse.csr_matrix(self.shape)
        return sparse.coo_matrix(
            (np.concatenate(self._vals),
             (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=self.shape).tocsr()


def scatter_add(builder, elem_matrix, row_dofs, col_dofs):
    """Accumulate one element matrix; order-independent by linearity."""
    builder.add(row_dofs, col_dofs, elem_matrix)
    return builder


def scatter_vector(vec, dofs, values):
    d = np.asarray(dofs).reshape(-1)
    v = np.asarray(values, dtype=float).reshape(-1)
    if np.any(d < 0):
        raise AssemblyError("inactive dof referenced during vector scatter")
    np.add.at(vec, d, v)


@dataclass
class QuadBatch:
    """Flat gauss-point batch over a set of elements of one mesh."""

    elems: np.ndarray    # (Q,) element id per point
    enodes: np.ndarray   # (Q, 4) node ids
    w: np.ndarray        # (Q,) physical weights
    x: np.ndarray        # (Q, 2) physical points
    N: np.ndarray        # (Q, 4)
    dNdx: np.ndarray     # (Q, 4, 2)
    d2Ndx2: np.ndarray   # (Q, 4, 2, 2) constant-Jacobian approximation
    G: np.ndarray        # (Q, 2, 2)
    h_elem: np.ndarray   # (Q,) diameter of the owning element

    @property
    def trG(self):
        return self.G[:, 0, 0] + self.G[:, 1, 1]

    @property
    def GddG(self):
        return np.einsum("qkl,qkl->q", self.G, self.G)

    def interpolate(self, nodal):
        """Evaluate a (n_nodes, m) nodal field at every quadrature point."""
        vals = np.asarray(nodal)[self.enodes]
        return np.einsum("qa,qa...->q...", self.N, vals)

    def gradient(self, nodal):
        """(Q, m, 2) physical gradients of a nodal field."""
        vals = np.asarray(nodal)[self.enodes]
        if vals.ndim == 2:
            return np.einsum("qa,qai->qi", vals, self.dNdx)
        return np.einsum("qam,qai->qmi", vals, self.dNdx)


def _point_batch(mesh, elems, xi, w_ref=None, w_phys=None):
    """Assemble QuadBatch rows for (element, reference point) pairs."""
    elems = np.asarray(elems, dtype=int)
    enodes = mesh.elements[elems]
    coords = mesh.node_coords[enodes]
    N, dN, J, detJ, Jinv = _mapping(coords, xi)
    if np.any(detJ <= 0):
        raise GeometryError("non-positive Jacobian in quadrature batch")
    dNdx = np.einsum("qaj,qji->qai", dN, Jinv)
    G = np.einsum("qjk,qjl->qkl", Jinv, Jinv)
    x = np.einsum("qa,qai->qi", N, coords)
    # Q1 reference Hessian has only the mixed entry s_x*s_y/4.
    href = np.zeros((4, 2, 2))
    href[:, 0, 1] = href[:, 1, 0] = 0.25 * _SX * _SY
    d2 = np.einsum("qik,qjl,aij->qakl", Jinv, Jinv, href)
    w = detJ * w_ref if w_phys is None else np.asarray(w_phys, dtype=float)
    h = mesh.element_diameters()[elems]
    return QuadBatch(elems, enodes, w, x, N, dNdx, d2, G, h)


def tensor_rule(order):
    """Tensor-product Gauss points/weights on the reference square."""
    xi, wx = _G1D[order]
    X, Y = np.meshgrid(xi, xi, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    W = np.outer(wx, wx).ravel()
    return pts, W


def volume_batch(mesh, cut_state=None, order=2):
    """Quadrature batch over the physical region of a (possibly cut) mesh.

    ACTIVE elements get the standard tensor rule; CUT elements use the
    clipped physical-point quadrature from the cut state; VOID contribute
    nothing.
    """
    from .cutcell import ACTIVE, CUT

    pts, W = tensor_rule(order)
    if cut_state is None:
        full = np.arange(mesh.n_elements)
    else:
        full = np.flatnonzero(cut_state.classification == ACTIVE)
    batches = []
    if len(full):
        elems = np.repeat(full, len(W))
        xi = np.tile(pts, (len(full), 1))
        wref = np.tile(W, len(full))
        batches.append(_point_batch(mesh, elems, xi, w_ref=wref))
    if cut_state is not None:
        cut_elems, cut_xi, cut_w = [], [], []
        for e in np.flatnonzero(cut_state.classification == CUT):
            qp, qw = cut_state.volume_quadrature[int(e)]
            if len(qw) == 0:
                continue
            coords = mesh.node_coords[mesh.elements[e]]
            xi = inverse_map(np.broadcast_to(coords, (len(qp), 4, 2)), qp)
            cut_elems.append(np.full(len(qw), e))
            cut_xi.append(xi)
            cut_w.append(qw)
        if cut_elems:
            batches.append(_point_batch(mesh, np.concatenate(cut_elems),
                                        np.vstack(cut_xi),
                                        w_phys=np.concatenate(cut_w)))
    return _concat_batches(batches, mesh)


def _concat_batches(batches, mesh):
    if not batches:
        z = np.zeros
        return QuadBatch(z(0, dtype=int), z((0, 4), dtype=int), z(0),
                         z((0, 2)), z((0, 4)), z((0, 4, 2)),
                         z((0, 4, 2, 2)), z((0, 2, 2)), z(0))
    if len(batches) == 1:
        return batches[0]
    return QuadBatch(*[np.concatenate([getattr(b, f) for b in batches])
                       for f in ("elems", "enodes", "w", "x", "N", "dNdx",
                                 "d2Ndx2", "G", "h_elem")])


@dataclass
class FacetBatch:
    """Two-sided gauss batch on interior facets (ghost-penalty jump terms)."""

    facets: np.ndarray    # (P,) facet id per point
    w: np.ndarray         # (P,) physical 1D weights
    x: np.ndarray         # (P, 2)
    normal: np.ndarray    # (P, 2) oriented away from the left element
    h_facet: np.ndarray   # (P,) mean adjacent element diameter
    left: "SideTrace"
    right: "SideTrace"


@dataclass
class SideTrace:
    elems: np.ndarray    # (P,)
    enodes: np.ndarray   # (P, 4)
    N: np.ndarray
    dNdx: np.ndarray
    h_elem: np.ndarray

    def interpolate(self, nodal):
        vals = np.asarray(nodal)[self.enodes]
        return np.einsum("qa,qa...->q...", self.N, vals)


def _side_trace(mesh, elems, x):
    elems = np.asarray(elems, dtype=int)
    enodes = mesh.elements[elems]
    coords = mesh.node_coords[enodes]
    xi = inverse_map(coords, x)
    N, dN, J, detJ, Jinv = _mapping(coords, xi)
    dNdx = np.einsum("qaj,qji->qai", dN, Jinv)
    return SideTrace(elems, enodes, N, dNdx, mesh.element_diameters()[elems])


def facet_batch(mesh, facet_ids, order=2):
    """Gauss batch along the given interior facets with both-side traces."""
    facet_ids = np.asarray(facet_ids, dtype=int)
    if len(facet_ids) == 0:
        z = np.zeros
        empty = SideTrace(z(0, dtype=int), z((0, 4), dtype=int), z((0, 4)),
                          z((0, 4, 2)), z(0))
        return FacetBatch(z(0, dtype=int), z(0), z((0, 2)), z((0, 2)), z(0),
                          empty, empty)
    xi, wx = _G1D[order]
    rows = mesh.interior_facets[facet_ids]
    a = mesh.node_coords[rows[:, 0]]
    b = mesh.node_coords[rows[:, 1]]
    d = b - a
    lens = np.linalg.norm(d, axis=1)
    t = d / lens[:, None]
    normal = np.column_stack([t[:, 1], -t[:, 0]])  # away from the left element
    mids = 0.5 * (a + b)
    P = len(facet_ids) * len(xi)
    x = (mids[:, None, :] + 0.5 * lens[:, None, None] * xi[None, :, None]
         * t[:, None, :]).reshape(P, 2)
    w = (0.5 * lens[:, None] * wx[None, :]).reshape(P)
    fids = np.repeat(facet_ids, len(xi))
    eL = np.repeat(rows[:, 2], len(xi))
    eR = np.repeat(rows[:, 3], len(xi))
    nrm = np.repeat(normal, len(xi), axis=0)
    diam = mesh.element_diameters()
    hf = 0.5 * (diam[eL] + diam[eR])
    return FacetBatch(fids, w, x, nrm, hf,
                      _side_trace(mesh, eL, x), _side_trace(mesh, eR, x))


def boundary_batch(mesh, tags, order=2):
    """One-sided gauss batch along tagged boundary facets (outward normal)."""
    idx = np.concatenate([mesh.boundary_facets_for(tag)
                          for tag in ([tags] if isinstance(tags, str) else tags)])
    rows = mesh.boundary_facets[idx] if len(idx) else np.zeros((0, 3), int)
    if len(rows) == 0:
        z = np.zeros
        empty = SideTrace(z(0, dtype=int), z((0, 4), dtype=int), z((0, 4)),
                          z((0, 4, 2)), z(0))
        return FacetBatch(z(0, dtype=int), z(0), z((0, 2)), z((0, 2)), z(0),
                          empty, empty)
    xi, wx = _G1D[order]
    a = mesh.node_coords[rows[:, 0]]
    b = mesh.node_coords[rows[:, 1]]
    d = b - a
    lens = np.linalg.norm(d, axis=1)
    t = d / lens[:, None]
    normal = np.column_stack([t[:, 1], -t[:, 0]])  # outward for CCW traversal
    mids = 0.5 * (a + b)
    P = len(rows) * len(xi)
    x = (mids[:, None, :] + 0.5 * lens[:, None, None] * xi[None, :, None]
         * t[:, None, :]).reshape(P, 2)
    w = (0.5 * lens[:, None] * wx[None, :]).reshape(P)
    e = np.repeat(rows[:, 2], len(xi))
    nrm = np.repeat(normal, len(xi), axis=0)
    diam = mesh.element_diameters()
    trace = _side_trace(mesh, e, x)
    return FacetBatch(np.repeat(np.arange(len(rows)), len(xi)), w, x, nrm,
                      diam[e], trace, trace)
