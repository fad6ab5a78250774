"""Weak Nitsche interface couplings.

Two couplings are assembled here: the fluid-fluid terms on the embedded
patch's outer boundary cutting the background mesh, and the fluid-solid
terms on the fitted patch-solid interface. Both use one-sided viscous and
pressure fluxes from the embedded fluid, penalty terms with trace-inequality
scalings, and (fluid-fluid only) convective interface terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ConfigurationError
from .fem import CooBuilder, SideTrace, _side_trace, scatter_vector

_I2 = np.eye(2)

_GAUSS_XI = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class CouplingParams:
    gamma: float = 50.0
    C_tr: float = 8.0
    symmetric_adjoint: bool = False  # printed sign is "+" (non-symmetric)

    def __post_init__(self):
        if self.gamma <= 0 or self.C_tr <= 0:
            raise ConfigurationError("Nitsche parameters must be positive")


@dataclass
class CouplingBlocks:
    """Residual vectors and Jacobian blocks of one interface operator."""

    R1: np.ndarray
    R2: np.ndarray
    J11: object = None
    J12: object = None
    J21: object = None
    J22: object = None


def _phi_T(params, c_inf, h):
    return (params.nu_f + params.c_u * c_inf * h
            + params.c_sigma * params.sigma * h * h)


def _elem_cinf(U, grid_vel, enodes):
    c = np.asarray(U, dtype=float)
    if grid_vel is not None:
        c = c - grid_vel
    return np.linalg.norm(c, axis=1)[enodes].max(axis=1)


def _trace_fields(trace: SideTrace, U, P):
    u = trace.interpolate(U)
    p = trace.interpolate(P)
    gradu = np.einsum("qam,qai->qmi", np.asarray(U)[trace.enodes], trace.dNdx)
    return u, p, gradu


class FluidFluidInterface:
    """Precomputed two-sided trace data along the cut fluid-fluid interface."""

    def __init__(self, bg_model, patch_model, segs, loop):
        """segs: cut interface segments; loop: patch boundary node loop whose
        edge k produced cutter edge k (facet_id)."""
        bg_mesh = bg_model.mesh
        patch_mesh = patch_model.mesh
        edge_elem = {}
        for a, b, e in patch_mesh.boundary_facets:
            edge_elem[frozenset((int(a), int(b)))] = int(e)
        xs, ws, ns, e1, e2, h2 = [], [], [], [], [], []
        for s in segs:
            k = s.facet_id
            na, nb = int(loop[k]), int(loop[k + 1])
            pe = edge_elem.get(frozenset((na, nb)))
            if pe is None:
                raise AssemblyError("cutter edge has no owning patch facet")
            edge_len = np.linalg.norm(patch_mesh.node_coords[nb]
                                      - patch_mesh.node_coords[na])
            for gp, gw in zip(s.points, s.weights):
                xs.append(gp)
                ws.append(gw)
                ns.append(s.normal)
                e1.append(s.elem)
                e2.append(pe)
                h2.append(edge_len)
        self.x = np.asarray(xs).reshape(-1, 2)
        self.w = np.asarray(ws, dtype=float)
        self.n = np.asarray(ns).reshape(-1, 2)
        self.h2 = np.asarray(h2, dtype=float)
        self.t1 = _side_trace(bg_mesh, np.asarray(e1, dtype=int), self.x)
        self.t2 = _side_trace(patch_mesh, np.asarray(e2, dtype=int), self.x)
        self.bg_model = bg_model
        self.patch_model = patch_model

    def scalings(self, U1, U2, grid_vel2=None, params=None):
        """Frozen penalty scalings (viscous and mass) at the given states."""
        cp = params if params is not None else self.coupling_params
        p1, p2 = self.bg_model.params, self.patch_model.params
        c1 = _elem_cinf(U1, None, self.t1.enodes)
        c2 = _elem_cinf(U2, grid_vel2, self.t2.enodes)
        phi1 = _phi_T(p1, c1, self.t1.h_elem)
        phi2 = _phi_T(p2, c2, self.t2.h_elem)
        svisc = cp.gamma * 0.5 * (p1.mu_f * cp.C_tr / self.t1.h_elem
                                  + p2.mu_f * cp.C_tr / self.h2)
        smass = cp.gamma * 0.5 * (p1.rho_f * phi1 ** 2 / self.t1.h_elem
                                  + p2.rho_f * phi2 ** 2 / self.h2)
        return {"svisc": svisc, "smass": smass}

    coupling_params = CouplingParams()

    def assemble(self, U1, P1, U2, P2, params: CouplingParams = None,
                 grid_vel2=None, with_tangent=True, frozen=None):
        """Blocks C^{f1f2} (rows f1) and C^{f2f1} (rows f2) with tangents."""
        cp = params if params is not None else CouplingParams()
        self.coupling_params = cp
        bgdm, pdm = self.bg_model.dofmap, self.patch_model.dofmap
        n1, n2 = bgdm.n_dofs, pdm.n_dofs
        R1, R2 = np.zeros(n1), np.zeros(n2)
        if len(self.w) == 0:
            return CouplingBlocks(R1, R2)
        mu = self.patch_model.params.mu_f
        rho = self.patch_model.params.rho_f
        t1, t2, n, w = self.t1, self.t2, self.n, self.w
        u1, p1v, g1 = _trace_fields(t1, U1, P1)
        u2, p2v, g2 = _trace_fields(t2, U2, P2)
        if frozen is None:
            frozen = self.scalings(U1, U2, grid_vel2)
        svisc, smass = frozen["svisc"], frozen["smass"]

        ju = u1 - u2
        jun = np.einsum("qi,qi->q", ju, n)
        eps2 = 0.5 * (g2 + np.swapaxes(g2, 1, 2))
        flux = 2.0 * mu * np.einsum("qij,qj->qi", eps2, n)  # one-sided f2
        m = 0.5 * rho * np.einsum("qi,qi->q", u1 + u2, n)   # <rho u>.n
        absm = np.abs(m)
        sgn = np.sign(m)
        adj = -1.0 if cp.symmetric_adjoint else 1.0

        N1, N2 = t1.N, t2.N
        dN2 = t2.dNdx
        dn2 = np.einsum("qai,qi->qa", dN2, n)

        # Residual rows, split by test-function side.
        r1 = ((-flux + p2v[:, None] * n)[:, None, :] * N1[:, :, None]
              + (svisc[:, None] * ju + smass[:, None] * jun[:, None] * n
                 + (0.5 * m)[:, None] * ju
                 + (0.5 * absm)[:, None] * ju)[:, None, :] * N1[:, :, None])
        r2u = ((flux - p2v[:, None] * n)[:, None, :] * N2[:, :, None]
               + adj * mu * (ju[:, None, :] * dn2[:, :, None]
                             + jun[:, None, None] * dN2)
               + (-svisc[:, None] * ju - smass[:, None] * jun[:, None] * n
                  + (0.5 * m)[:, None] * ju
                  - (0.5 * absm)[:, None] * ju)[:, None, :] * N2[:, :, None])
        r2p = -adj * jun[:, None] * N2

        d1 = bgdm.dofs(t1.enodes)
        d2 = pdm.dofs(t2.enodes)
        scatter_vector(R1, d1[:, :, :2], w[:, None, None] * r1)
        scatter_vector(R2, d2[:, :, :2], w[:, None, None] * r2u)
        scatter_vector(R2, d2[:, :, 2], w[:, None] * r2p)
        out = CouplingBlocks(R1, R2)
        if not with_tangent:
            return out

        Q = len(w)
        K11 = np.zeros((Q, 4, 3, 4, 3))
        K12 = np.zeros((Q, 4, 3, 4, 3))
        K21 = np.zeros((Q, 4, 3, 4, 3))
        K22 = np.zeros((Q, 4, 3, 4, 3))

        # d(flux)/dU2_{bk}: 2 mu eps(N_b e_k) n = mu (dn2_b delta_ik + n_i dN2_bk).
        dflux = mu * (np.einsum("qb,ik->qbik", dn2, _I2)
                      + np.einsum("qk,qbi->qbik", n, dN2))
        pen = svisc[:, None] + 0.5 * absm[:, None]

        def puv(K, Na, Nb, coef):
            # coef (Q,) * Na * Nb * delta_ik into velocity-velocity block.
            K[:, :, :2, :, :2] += np.einsum("q,qa,qb,ik->qaibk",
                                            w * coef, Na, Nb, _I2)

        def pnn(K, Na, Nb, coef):
            K[:, :, :2, :, :2] += np.einsum("q,qa,qb,qi,qk->qaibk",
                                            w * coef, Na, Nb, n, n)

        # Jump terms in [u]: penalties, upwind, and half the convective flux.
        puv(K11, N1, N1, svisc + 0.5 * absm + 0.5 * m)
        puv(K12, N1, N2, -(svisc + 0.5 * absm + 0.5 * m))
        puv(K21, N2, N1, -svisc - 0.5 * absm + 0.5 * m)
        puv(K22, N2, N2, svisc + 0.5 * absm - 0.5 * m)
        pnn(K11, N1, N1, smass)
        pnn(K12, N1, N2, -smass)
        pnn(K21, N2, N1, -smass)
        pnn(K22, N2, N2, smass)

        # Consistency flux rows (f1 and f2) wrt (U2, P2).
        K12[:, :, :2, :, :2] += np.einsum("q,qa,qbik->qaibk", -w, N1, dflux)
        K12[:, :, :2, :, 2] += np.einsum("q,qa,qb,qi->qaib", w, N1, N2, n)
        K22[:, :, :2, :, :2] += np.einsum("q,qa,qbik->qaibk", w, N2, dflux)
        K22[:, :, :2, :, 2] -= np.einsum("q,qa,qb,qi->qaib", w, N2, N2, n)

        # Adjoint rows (f2 only) wrt U1, U2, and the q2 row.
        adjop = adj * mu * (np.einsum("qa,ik->qaik", dn2, _I2)
                            + np.einsum("qai,qk->qaik", dN2, n))
        K21[:, :, :2, :, :2] += np.einsum("q,qaik,qb->qaibk", w, adjop, N1)
        K22[:, :, :2, :, :2] -= np.einsum("q,qaik,qb->qaibk", w, adjop, N2)
        K21[:, :, 2, :, :2] += np.einsum("q,qa,qb,qk->qabk", -adj * w, N2, N1, n)
        K22[:, :, 2, :, :2] += np.einsum("q,qa,qb,qk->qabk", adj * w, N2, N2, n)

        # Convective terms: derivatives of m and |m| (fully linearized).
        dm1 = 0.5 * rho * np.einsum("qb,qk->qbk", N1, n)   # dm/dU1_{bk}
        dm2 = 0.5 * rho * np.einsum("qb,qk->qbk", N2, n)
        half_ju = 0.5 * ju
        for K, dm in ((K11, dm1), (K12, dm2)):
            K[:, :, :2, :, :2] += np.einsum("q,qa,qi,qbk->qaibk",
                                            w, N1, half_ju, dm)
        for K, dm in ((K21, dm1), (K22, dm2)):
            K[:, :, :2, :, :2] += np.einsum("q,qa,qi,qbk->qaibk",
                                            w, N2, half_ju, dm)
        # |m| derivative enters with jump test-function sign.
        K11[:, :, :2, :, :2] += np.einsum("q,qa,qi,qbk->qaibk",
                                          w * sgn, N1, half_ju, dm1)
        K12[:, :, :2, :, :2] += np.einsum("q,qa,qi,qbk->qaibk",
                                          w * sgn, N1, half_ju, dm2)
        K21[:, :, :2, :, :2] -= np.einsum("q,qa,qi,qbk->qaibk",
                                          w * sgn, N2, half_ju, dm1)
        K22[:, :, :2, :, :2] -= np.einsum("q,qa,qi,qbk->qaibk",
                                          w * sgn, N2, half_ju, dm2)

        out.J11 = _to_csr(K11, d1, d1, n1, n1)
        out.J12 = _to_csr(K12, d1, d2, n1, n2)
        out.J21 = _to_csr(K21, d2, d1, n2, n1)
        out.J22 = _to_csr(K22, d2, d2, n2, n2)
        return out


def _to_csr(K, dr, dc, nr, nc):
    Q = K.shape[0]
    b = CooBuilder(nr, nc)
    b.add(dr.reshape(Q, 12), dc.reshape(Q, 12), K.reshape(Q, 12, 12))
    return b.tocsr()


class FluidSolidInterface:
    """Fitted (or cut) interface between the embedded fluid and the solid.

    The fluid side supplies one-sided viscous/pressure fluxes and full-element
    traces; the solid side enters through edge-linear traces of its interface
    facets, matched pointwise by construction.
    """

    def __init__(self, fluid_model, solid_model, x, w, n, fluid_elems,
                 solid_edges, edge_t, h):
        """x,w,n: quadrature points/weights/normals (normal points from the
        fluid into the solid); fluid_elems: owning fluid elements;
        solid_edges: (K,2) solid node pairs; edge_t: parameter in [0,1] along
        each edge; h: penalty length per point."""
        self.fluid_model = fluid_model
        self.solid_model = solid_model
        self.x = x
        self.w = w
        self.n = n
        self.h = h
        self.trace = _side_trace(fluid_model.mesh, fluid_elems, x)
        self.solid_edges = np.asarray(solid_edges, dtype=int)
        self.Ns = np.column_stack([1.0 - edge_t, edge_t])  # (K, 2)

    def solid_velocity(self, U_solid):
        return np.einsum("qa,qai->qi", self.Ns, np.asarray(U_solid)[self.solid_edges])

    def scalings(self, U2, grid_vel2=None, params=None):
        cp = params if params is not None else self.coupling_params
        p2 = self.fluid_model.params
        c2 = _elem_cinf(U2, grid_vel2, self.trace.enodes)
        phi = _phi_T(p2, c2, self.trace.h_elem)
        return {"svisc": cp.gamma * p2.mu_f / self.h,
                "smass": cp.gamma * p2.rho_f * phi ** 2 / self.h}

    coupling_params = CouplingParams()

    def assemble(self, U2, P2, U_solid, dvel_ddisp, params: CouplingParams = None,
                 grid_vel2=None, with_tangent=True, frozen=None):
        """Blocks C^{f2s} (fluid rows) and C^{sf2} (solid rows).

        U_solid: nodal solid velocity; dvel_ddisp: scalar d(velocity)/
        d(displacement) of the Newmark recovery, used for the displacement
        tangent columns.
        """
        cp = params if params is not None else CouplingParams()
        self.coupling_params = cp
        fdm = self.fluid_model.dofmap
        sdm = self.solid_model.dofmap
        nf, ns = fdm.n_dofs, sdm.n_dofs
        Rf, Rs = np.zeros(nf), np.zeros(ns)
        if len(self.w) == 0:
            return CouplingBlocks(Rf, Rs)
        mu = self.fluid_model.params.mu_f
        t2, n, w = self.trace, self.n, self.w
        u2, p2v, g2 = _trace_fields(t2, U2, P2)
        us = self.solid_velocity(U_solid)
        if frozen is None:
            frozen = self.scalings(U2, grid_vel2)
        svisc, smass = frozen["svisc"], frozen["smass"]

        ju = u2 - us
        jun = np.einsum("qi,qi->q", ju, n)
        eps2 = 0.5 * (g2 + np.swapaxes(g2, 1, 2))
        flux = 2.0 * mu * np.einsum("qij,qj->qi", eps2, n)
        adj = -1.0 if cp.symmetric_adjoint else 1.0

        N2, dN2 = t2.N, t2.dNdx
        dn2 = np.einsum("qai,qi->qa", dN2, n)
        Ns = self.Ns

        rfu = ((-flux + p2v[:, None] * n)[:, None, :] * N2[:, :, None]
               + adj * mu * (ju[:, None, :] * dn2[:, :, None]
                             + jun[:, None, None] * dN2)
               + (svisc[:, None] * ju
                  + smass[:, None] * jun[:, None] * n)[:, None, :]
               * N2[:, :, None])
        rfp = -adj * jun[:, None] * N2
        rs = ((flux - p2v[:, None] * n)[:, None, :] * Ns[:, :, None]
              + (-svisc[:, None] * ju - smass[:, None] * jun[:, None] * n)
              [:, None, :] * Ns[:, :, None])

        df = fdm.dofs(t2.enodes)
        ds = sdm.dofs(self.solid_edges)
        scatter_vector(Rf, df[:, :, :2], w[:, None, None] * rfu)
        scatter_vector(Rf, df[:, :, 2], w[:, None] * rfp)
        scatter_vector(Rs, ds, w[:, None, None] * rs)
        out = CouplingBlocks(Rf, Rs)
        if not with_tangent:
            return out

        Q = len(w)
        Kff = np.zeros((Q, 4, 3, 4, 3))
        Kfs = np.zeros((Q, 4, 3, 2, 2))
        Ksf = np.zeros((Q, 2, 2, 4, 3))
        Kss = np.zeros((Q, 2, 2, 2, 2))

        dflux = mu * (np.einsum("qb,ik->qbik", dn2, _I2)
                      + np.einsum("qk,qbi->qbik", n, dN2))
        adjop = adj * mu * (np.einsum("qa,ik->qaik", dn2, _I2)
                            + np.einsum("qai,qk->qaik", dN2, n))
        fac = float(dvel_ddisp)

        # Fluid rows wrt fluid dofs.
        Kff[:, :, :2, :, :2] += np.einsum("q,qa,qbik->qaibk", -w, N2, dflux)
        Kff[:, :, :2, :, 2] += np.einsum("q,qa,qb,qi->qaib", w, N2, N2, n)
        Kff[:, :, :2, :, :2] += np.einsum("q,qaik,qb->qaibk", w, adjop, N2)
        Kff[:, :, 2, :, :2] += np.einsum("q,qa,qb,qk->qabk", -adj * w, N2, N2, n)
        Kff[:, :, :2, :, :2] += np.einsum("q,qa,qb,ik->qaibk", w * svisc,
                                          N2, N2, _I2)
        Kff[:, :, :2, :, :2] += np.einsum("q,qa,qb,qi,qk->qaibk", w * smass,
                                          N2, N2, n, n)

        # Fluid rows wrt solid displacement (through ju = u2 - us).
        Kfs[:, :, :2, :, :] -= fac * np.einsum("q,qaik,qb->qaibk", w, adjop, Ns)
        Kfs[:, :, 2, :, :] += fac * np.einsum("q,qa,qb,qk->qabk", adj * w,
                                              N2, Ns, n)
        Kfs[:, :, :2, :, :] -= fac * np.einsum("q,qa,qb,ik->qaibk", w * svisc,
                                               N2, Ns, _I2)
        Kfs[:, :, :2, :, :] -= fac * np.einsum("q,qa,qb,qi,qk->qaibk",
                                               w * smass, N2, Ns, n, n)

        # Solid rows wrt fluid dofs.
        Ksf[:, :, :, :, :2] += np.einsum("q,qa,qbik->qaibk", w, Ns, dflux)
        Ksf[:, :, :, :, 2] -= np.einsum("q,qa,qb,qi->qaib", w, Ns, N2, n)
        Ksf[:, :, :, :, :2] -= np.einsum("q,qa,qb,ik->qaibk", w * svisc,
                                         Ns, N2, _I2)
        Ksf[:, :, :, :, :2] -= np.einsum("q,qa,qb,qi,qk->qaibk", w * smass,
                                         Ns, N2, n, n)

        # Solid rows wrt solid displacement.
        Kss += fac * np.einsum("q,qa,qb,ik->qaibk", w * svisc, Ns, Ns, _I2)
        Kss += fac * np.einsum("q,qa,qb,qi,qk->qaibk", w * smass, Ns, Ns, n, n)

        bff = CooBuilder(nf, nf)
        bff.add(df.reshape(Q, 12), df.reshape(Q, 12), Kff.reshape(Q, 12, 12))
        bfs = CooBuilder(nf, ns)
        bfs.add(df.reshape(Q, 12), ds.reshape(Q, 4), Kfs.reshape(Q, 12, 4))
        bsf = CooBuilder(ns, nf)
        bsf.add(ds.reshape(Q, 4), df.reshape(Q, 12), Ksf.reshape(Q, 4, 12))
        bss = CooBuilder(ns, ns)
        bss.add(ds.reshape(Q, 4), ds.reshape(Q, 4), Kss.reshape(Q, 4, 4))
        out.J11, out.J12 = bff.tocsr(), bfs.tocsr()
        out.J21, out.J22 = bsf.tocsr(), bss.tocsr()
        return out


def fitted_interface(fluid_model, solid_model, node_pairs, tag="fsi"):
    """Quadrature along matched patch-solid boundary facets.

    node_pairs maps patch node id -> solid node id for the interface ring.
    The patch mesh held by fluid_model is the current (deformed) geometry.
    """
    mesh = fluid_model.mesh
    idx = mesh.boundary_facets_for(tag)
    rows = mesh.boundary_facets[idx]
    if len(rows) == 0:
        raise ConfigurationError(f"no '{tag}' boundary facets on patch mesh")
    a = mesh.node_coords[rows[:, 0]]
    b = mesh.node_coords[rows[:, 1]]
    d = b - a
    lens = np.linalg.norm(d, axis=1)
    t = d / lens[:, None]
    normal = np.column_stack([t[:, 1], -t[:, 0]])  # outward: into the solid
    K = len(rows) * len(_GAUSS_XI)
    tpar = 0.5 * (1.0 + _GAUSS_XI)
    x = (a[:, None, :] + lens[:, None, None] * tpar[None, :, None]
         * t[:, None, :]).reshape(K, 2)
    w = np.repeat(0.5 * lens, len(_GAUSS_XI))
    n = np.repeat(normal, len(_GAUSS_XI), axis=0)
    elems = np.repeat(rows[:, 2], len(_GAUSS_XI))
    sa = np.array([node_pairs[int(i)] for i in rows[:, 0]])
    sb = np.array([node_pairs[int(i)] for i in rows[:, 1]])
    edges = np.repeat(np.column_stack([sa, sb]), len(_GAUSS_XI), axis=0)
    et = np.tile(tpar, len(rows))
    h = np.repeat(lens, len(_GAUSS_XI))
    return FluidSolidInterface(fluid_model, solid_model, x, w, n, elems,
                               edges, et, h)


def cut_interface(bg_model, solid_model, segs, loop, solid_coords=None):
    """Fixed-grid variant: fluid-solid terms on cut background segments.

    loop: deformed solid boundary node loop whose edge k generated cutter
    edge k; solid traces are edge-linear between the loop nodes;
    solid_coords: current solid node positions (defaults to the reference).
    """
    if solid_coords is None:
        solid_coords = solid_model.mesh.node_coords
    xs, ws, ns, elems, edges, et, hh = [], [], [], [], [], [], []
    for s in segs:
        k = s.facet_id
        na, nb = int(loop[k]), int(loop[k + 1])
        pa = solid_coords[na]
        pb = solid_coords[nb]
        d = pb - pa
        el2 = float(d @ d)
        elen = np.sqrt(el2)
        for gp, gw in zip(s.points, s.weights):
            xs.append(gp)
            ws.append(gw)
            ns.append(s.normal)
            elems.append(s.elem)
            edges.append((na, nb))
            et.append(float(np.clip((gp - pa) @ d / el2, 0.0, 1.0)))
            hh.append(elen)
    return FluidSolidInterface(bg_model, solid_model,
                               np.asarray(xs).reshape(-1, 2),
                               np.asarray(ws, dtype=float),
                               np.asarray(ns).reshape(-1, 2),
                               np.asarray(elems, dtype=int),
                               np.asarray(edges, dtype=int).reshape(-1, 2),
                               np.asarray(et, dtype=float),
                               np.asarray(hh, dtype=float))


def match_interface_nodes(patch_mesh, solid_mesh, patch_tag="fsi",
                          solid_tag="surface", tol=1e-10):
    """Node-id map patch -> solid along the fitted interface ring."""
    pn = np.asarray(patch_mesh.node_sets[patch_tag], dtype=int)
    sn = np.asarray(solid_mesh.node_sets[solid_tag], dtype=int)
    if len(pn) != len(sn):
        raise ConfigurationError(
            f"interface node counts differ: {len(pn)} vs {len(sn)}")
    pc = patch_mesh.node_coords[pn]
    sc = solid_mesh.node_coords[sn]
    pairs = {}
    for i, p in zip(pn, pc):
        d = np.linalg.norm(sc - p, axis=1)
        j = int(np.argmin(d))
        if d[j] > tol:
            raise ConfigurationError(
                "interface meshes are not node-matching "
                f"(min distance {d[j]:.3e})")
        pairs[int(i)] = int(sn[j])
    return pairs
