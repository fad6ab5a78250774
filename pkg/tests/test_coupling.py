import numpy as np
import pytest

from hybridfsi.coupling import (CouplingParams, FluidFluidInterface,
                                cut_interface, fitted_interface,
                                match_interface_nodes)
from hybridfsi.cutcell import classify_and_cut
from hybridfsi.errors import ConfigurationError
from hybridfsi.fluid import FluidModel, FluidParams
from hybridfsi.mesh import (boundary_polyline, generate_annulus_patch,
                            generate_disc_mesh, generate_structured_rect)
from hybridfsi.solid import SolidModel, SolidParams


def overlap_setup(nx=10, n_circum=16, n_radial=3, rho=1.0, mu=1.0,
                  steady=True, dt=1.0):
    bg = generate_structured_rect((-2, -2), (4, 4), nx, nx)
    patch = generate_annulus_patch((0, 0), 0.5, 1.2, n_circum, n_radial)
    loop = boundary_polyline(patch, "ff")
    cs = classify_and_cut(bg, patch.node_coords[loop])
    p = FluidParams(rho, mu, steady=steady, dt=dt)
    m1 = FluidModel(bg, p, cut_state=cs)
    m2 = FluidModel(patch, p)
    iface = FluidFluidInterface(m1, m2, cs.interface_quadrature, loop)
    return m1, m2, iface, cs, loop


def const_states(m1, m2, a, b):
    U1 = np.tile(np.asarray(a, dtype=float), (m1.mesh.n_nodes, 1))
    U2 = np.tile(np.asarray(b, dtype=float), (m2.mesh.n_nodes, 1))
    return U1, np.zeros(m1.mesh.n_nodes), U2, np.zeros(m2.mesh.n_nodes)


class TestFluidFluid:
    def test_identical_rigid_states_annihilate(self):
        m1, m2, iface, _, _ = overlap_setup()
        a = [0.7, -0.4]
        U1, P1, U2, P2 = const_states(m1, m2, a, a)
        out = iface.assemble(U1, P1, U2, P2, with_tangent=False)
        assert np.allclose(out.R1, 0.0, atol=1e-11)
        assert np.allclose(out.R2, 0.0, atol=1e-11)

    def test_viscous_penalty_energy(self):
        # Constant jump j against the jump test function: with the viscous
        # penalty scaling frozen to s, energy = s * perimeter * |j|^2.
        m1, m2, iface, cs, _ = overlap_setup(rho=1e-30)
        j = np.array([0.3, -0.5])
        U1, P1, U2, P2 = const_states(m1, m2, j, [0.0, 0.0])
        s = 7.5
        K = len(iface.w)
        frozen = {"svisc": np.full(K, s), "smass": np.zeros(K)}
        out = iface.assemble(U1, P1, U2, P2, with_tangent=False, frozen=frozen)
        X1 = m1.pack(U1, np.zeros(m1.mesh.n_nodes))
        perim = 16 * 2 * 1.2 * np.sin(np.pi / 16)
        expect = s * perim * float(j @ j)
        assert out.R1 @ X1 == pytest.approx(expect, rel=1e-8)
        # Opposite test side carries the opposite jump sign.
        X2 = m2.pack(np.tile(j, (m2.mesh.n_nodes, 1)),
                     np.zeros(m2.mesh.n_nodes))
        assert out.R2 @ X2 == pytest.approx(-expect, rel=1e-8)

    def test_normal_penalty_energy_polygon_symmetry(self):
        # sum_e L_e n_e (x) n_e = (perimeter/2) I for a regular polygon, so
        # the normal penalty energy is s * perimeter * |j|^2 / 2.
        m1, m2, iface, _, _ = overlap_setup(rho=1e-30)
        j = np.array([0.8, 0.2])
        U1, P1, U2, P2 = const_states(m1, m2, j, [0.0, 0.0])
        s = 2.25
        K = len(iface.w)
        frozen = {"svisc": np.zeros(K), "smass": np.full(K, s)}
        out = iface.assemble(U1, P1, U2, P2, with_tangent=False, frozen=frozen)
        X1 = m1.pack(U1, np.zeros(m1.mesh.n_nodes))
        perim = 16 * 2 * 1.2 * np.sin(np.pi / 16)
        expect = 0.5 * s * perim * float(j @ j)
        assert out.R1 @ X1 == pytest.approx(expect, rel=1e-8)

    def test_convective_interface_energy(self):
        # Constant states a, b with zero penalties: contracting against the
        # one-sided test (v1 = j, v2 = 0) leaves the segment-wise sum of
        # L_e (m_e/2 + |m_e|/2) |j|^2 with m_e = rho <u> . n_e.
        m1, m2, iface, cs, _ = overlap_setup(rho=2.0, mu=1e-30)
        a, b = np.array([0.9, 0.1]), np.array([-0.3, 0.4])
        j = a - b
        U1, P1, U2, P2 = const_states(m1, m2, a, b)
        K = len(iface.w)
        frozen = {"svisc": np.zeros(K), "smass": np.zeros(K)}
        out = iface.assemble(U1, P1, U2, P2, with_tangent=False, frozen=frozen)
        X1 = m1.pack(np.tile(j, (m1.mesh.n_nodes, 1)),
                     np.zeros(m1.mesh.n_nodes))
        expect = 0.0
        for seg in cs.interface_quadrature:
            m_e = 2.0 * float(0.5 * (a + b) @ seg.normal)
            expect += seg.length * 0.5 * (m_e + abs(m_e)) * float(j @ j)
        assert out.R1 @ X1 == pytest.approx(expect, rel=1e-8)

    def test_tangent_matches_finite_differences(self):
        m1, m2, iface, _, _ = overlap_setup(nx=6, n_circum=8, n_radial=1,
                                            rho=1.2, mu=0.3, steady=False,
                                            dt=0.05)
        cp = CouplingParams(gamma=10.0, C_tr=4.0)
        rng = np.random.default_rng(11)
        U1 = rng.normal(size=(m1.mesh.n_nodes, 2))
        P1 = rng.normal(size=m1.mesh.n_nodes)
        U2 = rng.normal(size=(m2.mesh.n_nodes, 2))
        P2 = rng.normal(size=m2.mesh.n_nodes)
        gv2 = 0.2 * rng.normal(size=(m2.mesh.n_nodes, 2))
        frozen = iface.scalings(U1, U2, gv2, params=cp)
        x1 = m1.pack(U1, P1)
        x2 = m2.pack(U2, P2)
        n1, n2 = len(x1), len(x2)

        def res(v1, v2):
            uu1, pp1 = m1.unpack(v1)
            uu2, pp2 = m2.unpack(v2)
            o = iface.assemble(uu1, pp1, uu2, pp2, params=cp,
                               with_tangent=False, frozen=frozen)
            return np.concatenate([o.R1, o.R2])

        out = iface.assemble(U1, P1, U2, P2, params=cp, frozen=frozen)
        J = np.block([[out.J11.toarray(), out.J12.toarray()],
                      [out.J21.toarray(), out.J22.toarray()]])
        x = np.concatenate([x1, x2])
        eps = 1e-6
        fd = np.zeros_like(J)
        for k in range(n1 + n2):
            xp, xm = x.copy(), x.copy()
            xp[k] += eps
            xm[k] -= eps
            fd[:, k] = (res(xp[:n1], xp[n1:]) - res(xm[:n1], xm[n1:])) / (2 * eps)
        assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-6


def fitted_setup(n_circum=16, n_radial=2, mu=0.01, rho=1.0):
    patch = generate_annulus_patch((0, 0), 0.75, 1.2, n_circum, n_radial,
                                   theta0=-3 * np.pi / 4)
    disc = generate_disc_mesh((0, 0), 0.75, n_circum)
    fm = FluidModel(patch, FluidParams(rho, mu, steady=True))
    sm = SolidModel(disc, SolidParams(rho_s=2.0, E_s=100.0, nu_s=0.3))
    pairs = match_interface_nodes(patch, disc)
    iface = fitted_interface(fm, sm, pairs)
    return fm, sm, iface


class TestFluidSolid:
    def test_node_matching(self):
        patch = generate_annulus_patch((0, 0), 0.75, 1.2, 16, 2,
                                       theta0=-3 * np.pi / 4)
        disc = generate_disc_mesh((0, 0), 0.75, 16)
        pairs = match_interface_nodes(patch, disc)
        assert len(pairs) == 16
        for pn, sn in pairs.items():
            assert np.allclose(patch.node_coords[pn], disc.node_coords[sn],
                               atol=1e-12)

    def test_mismatch_detected(self):
        patch = generate_annulus_patch((0, 0), 0.7, 1.2, 16, 2,
                                       theta0=-3 * np.pi / 4)
        disc = generate_disc_mesh((0, 0), 0.75, 16)  # different radius
        with pytest.raises(ConfigurationError):
            match_interface_nodes(patch, disc)

    def test_matched_rigid_motion_annihilates(self):
        fm, sm, iface = fitted_setup()
        c = np.array([0.5, -1.2])
        U2 = np.tile(c, (fm.mesh.n_nodes, 1))
        Us = np.tile(c, (sm.mesh.n_nodes, 1))
        out = iface.assemble(U2, np.zeros(fm.mesh.n_nodes), Us, 1.0,
                             with_tangent=False)
        assert np.allclose(out.R1, 0.0, atol=1e-12)
        assert np.allclose(out.R2, 0.0, atol=1e-12)

    def test_constant_pressure_traction(self):
        # At rest with p = pbar only the pressure flux acts: each interface
        # facet pushes -pbar * (L/2) * n onto both of its solid end nodes.
        fm, sm, iface = fitted_setup()
        pbar = 3.0
        Z2 = np.zeros((fm.mesh.n_nodes, 2))
        Zs = np.zeros((sm.mesh.n_nodes, 2))
        out = iface.assemble(Z2, np.full(fm.mesh.n_nodes, pbar), Zs, 1.0,
                             with_tangent=False)
        nodal = out.R2.reshape(-1, 2)
        expect = np.zeros_like(nodal)
        pairs = match_interface_nodes(fm.mesh, sm.mesh)
        idx = fm.mesh.boundary_facets_for("fsi")
        for a, b, _ in fm.mesh.boundary_facets[idx]:
            pa, pb = fm.mesh.node_coords[a], fm.mesh.node_coords[b]
            t = pb - pa
            L = np.linalg.norm(t)
            n = np.array([t[1], -t[0]]) / L
            for node in (pairs[int(a)], pairs[int(b)]):
                expect[node] -= pbar * 0.5 * L * n
        assert np.allclose(nodal, expect, atol=1e-12)
        # Closed loop: the net pressure force vanishes.
        assert np.allclose(nodal.sum(axis=0), 0.0, atol=1e-12)

    def test_viscous_penalty_energy(self):
        # Constant slip c of the fluid against a resting solid: with the
        # scaling frozen to s the fluid-side jump energy is s * perim * |c|^2.
        fm, sm, iface = fitted_setup()
        c = np.array([0.4, 0.7])
        U2 = np.tile(c, (fm.mesh.n_nodes, 1))
        Zs = np.zeros((sm.mesh.n_nodes, 2))
        s = 4.0
        K = len(iface.w)
        frozen = {"svisc": np.full(K, s), "smass": np.zeros(K)}
        out = iface.assemble(U2, np.zeros(fm.mesh.n_nodes), Zs, 1.0,
                             with_tangent=False, frozen=frozen)
        Xf = fm.pack(U2, np.zeros(fm.mesh.n_nodes))
        perim = 16 * 2 * 0.75 * np.sin(np.pi / 16)
        assert out.R1 @ Xf == pytest.approx(s * perim * float(c @ c),
                                            rel=1e-12)

    def test_action_reaction(self):
        # Summing velocity rows over each side uses the partition of unity;
        # every jump term cancels and the flux terms are equal and opposite.
        fm, sm, iface = fitted_setup(mu=0.8, rho=1.5)
        rng = np.random.default_rng(3)
        U2 = rng.normal(size=(fm.mesh.n_nodes, 2))
        P2 = rng.normal(size=fm.mesh.n_nodes)
        Us = rng.normal(size=(sm.mesh.n_nodes, 2))
        out = iface.assemble(U2, P2, Us, 1.0, with_tangent=False)
        for comp in range(2):
            e = np.zeros(2)
            e[comp] = 1.0
            Xf = fm.pack(np.tile(e, (fm.mesh.n_nodes, 1)),
                         np.zeros(fm.mesh.n_nodes))
            Xs = np.tile(e, (sm.mesh.n_nodes, 1)).reshape(-1)
            total = out.R1 @ Xf + out.R2 @ Xs
            assert abs(total) < 1e-11 * max(1.0, np.abs(out.R2).max())

    def test_tangent_matches_finite_differences(self):
        fm, sm, iface = fitted_setup(n_circum=12, n_radial=1, mu=0.3)
        cp = CouplingParams(gamma=20.0)
        fac = 3.7  # velocity sensitivity to displacement
        rng = np.random.default_rng(7)
        U2 = rng.normal(size=(fm.mesh.n_nodes, 2))
        P2 = rng.normal(size=fm.mesh.n_nodes)
        D = 0.1 * rng.normal(size=(sm.mesh.n_nodes, 2))
        U_base = rng.normal(size=(sm.mesh.n_nodes, 2))
        frozen = iface.scalings(U2, params=cp)
        xf = fm.pack(U2, P2)
        xs = D.reshape(-1)
        nf, ns = len(xf), len(xs)

        def res(vf, vs):
            uu, pp = fm.unpack(vf)
            Us = U_base + fac * vs.reshape(-1, 2)
            o = iface.assemble(uu, pp, Us, fac, params=cp,
                               with_tangent=False, frozen=frozen)
            return np.concatenate([o.R1, o.R2])

        out = iface.assemble(U2, P2, U_base + fac * D, fac, params=cp,
                             frozen=frozen)
        J = np.block([[out.J11.toarray(), out.J12.toarray()],
                      [out.J21.toarray(), out.J22.toarray()]])
        x = np.concatenate([xf, xs])
        eps = 1e-6
        fd = np.zeros_like(J)
        for k in range(nf + ns):
            xp, xm = x.copy(), x.copy()
            xp[k] += eps
            xm[k] -= eps
            fd[:, k] = (res(xp[:nf], xp[nf:]) - res(xm[:nf], xm[nf:])) / (2 * eps)
        assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-7


class TestCutFluidSolid:
    def test_rest_and_action_reaction(self):
        bg = generate_structured_rect((-2, -2), (4, 4), 9, 9)
        disc = generate_disc_mesh((0, 0), 0.75, 16)
        loop = boundary_polyline(disc, "surface")
        cs = classify_and_cut(bg, disc.node_coords[loop])
        fm = FluidModel(bg, FluidParams(1.0, 0.05, steady=True), cut_state=cs)
        sm = SolidModel(disc, SolidParams(rho_s=2.0, E_s=100.0, nu_s=0.3))
        iface = cut_interface(fm, sm, cs.interface_quadrature, loop)
        Z = np.zeros((bg.n_nodes, 2))
        out = iface.assemble(Z, np.zeros(bg.n_nodes),
                             np.zeros((disc.n_nodes, 2)), 1.0,
                             with_tangent=False)
        assert np.allclose(out.R1, 0.0, atol=1e-14)
        assert np.allclose(out.R2, 0.0, atol=1e-14)

        rng = np.random.default_rng(5)
        U = rng.normal(size=(bg.n_nodes, 2))
        P = rng.normal(size=bg.n_nodes)
        Us = rng.normal(size=(disc.n_nodes, 2))
        out = iface.assemble(U, P, Us, 1.0, with_tangent=False)
        for comp in range(2):
            e = np.zeros(2)
            e[comp] = 1.0
            Xf = fm.pack(np.tile(e, (bg.n_nodes, 1)), np.zeros(bg.n_nodes))
            total = out.R1 @ Xf + out.R2.reshape(-1, 2)[:, comp].sum()
            assert abs(total) < 1e-10 * max(1.0, np.abs(out.R2).max())
