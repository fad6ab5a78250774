import numpy as np
import pytest

from hybridfsi.errors import ConfigurationError, ElementInversionError
from hybridfsi.mesh import generate_structured_rect
from hybridfsi.solid import (
    SolidModel,
    SolidParams,
    SolidState,
    galpha_params,
    galpha_residual,
    lame_from_engineering,
    newmark_update,
    pk2_stress,
)


class TestLame:
    def test_ball_material(self):
        lam, mu = lame_from_engineering(50.0, 0.3)
        assert lam == pytest.approx(15.0 / 0.52, rel=1e-12)
        assert mu == pytest.approx(50.0 / 2.6, rel=1e-12)

    def test_zero_poisson(self):
        lam, mu = lame_from_engineering(3.0, 0.0)
        assert lam == 0.0
        assert mu == 1.5

    def test_flag_material(self):
        _, mu = lame_from_engineering(2.0, 0.35)
        assert mu == pytest.approx(2.0 / 2.7, rel=1e-12)

    def test_incompressible_rejected(self):
        with pytest.raises(ConfigurationError):
            lame_from_engineering(1.0, 0.5)


class TestPk2:
    def test_reference_stress_free(self):
        S, _, _ = pk2_stress(np.eye(2), 2.0, 3.0)
        assert np.allclose(S, 0.0, atol=1e-15)

    def test_uniaxial_stretch(self):
        S, _, _ = pk2_stress(np.diag([2.0, 1.0]), 1.0, 1.0)
        assert S[0, 0] == pytest.approx(0.75 + np.log(2.0) * 0.25, abs=1e-12)
        assert S[1, 1] == pytest.approx(np.log(2.0), abs=1e-12)
        assert S[0, 1] == pytest.approx(0.0, abs=1e-15)

    def test_rigid_rotation(self):
        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        S, _, _ = pk2_stress(R, 1.3, 0.8)
        assert np.allclose(S, 0.0, atol=1e-13)

    def test_inversion_raises(self):
        with pytest.raises(ElementInversionError):
            pk2_stress(np.diag([-1.0, 1.0]), 1.0, 1.0)


def ball_model(nx=2, ny=2):
    mesh = generate_structured_rect((0, 0), (1, 1), nx, ny)
    return SolidModel(mesh, SolidParams(rho_s=1.0, E_s=50.0, nu_s=0.3))


class TestInternalForce:
    def test_zero_displacement(self):
        model = ball_model()
        f, K = model.internal_force_and_tangent(np.zeros((model.mesh.n_nodes, 2)))
        assert np.allclose(f, 0.0, atol=1e-14)

    def test_rigid_translation(self):
        model = ball_model()
        D = np.full((model.mesh.n_nodes, 2), [0.3, -0.2])
        f, _ = model.internal_force_and_tangent(D)
        assert np.allclose(f, 0.0, atol=1e-12)

    def test_objectivity(self):
        model = ball_model()
        th = 0.4
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        D = model.mesh.node_coords @ R.T - model.mesh.node_coords
        f, _ = model.internal_force_and_tangent(D)
        assert np.allclose(f, 0.0, atol=1e-10)

    def test_tangent_matches_finite_differences(self):
        model = ball_model()
        rng = np.random.default_rng(5)
        D = 0.02 * rng.normal(size=(model.mesh.n_nodes, 2))
        f0, K = model.internal_force_and_tangent(D)
        Kd = K.toarray()
        eps = 1e-6
        n = model.dofmap.n_dofs
        fd = np.zeros((n, n))
        for j in range(n):
            dp = model.dofmap.pack(D).copy()
            dm = dp.copy()
            dp[j] += eps
            dm[j] -= eps
            fp, _ = model.internal_force_and_tangent(
                model.dofmap.expand(dp), with_tangent=False)
            fm, _ = model.internal_force_and_tangent(
                model.dofmap.expand(dm), with_tangent=False)
            fd[:, j] = (fp - fm) / (2 * eps)
        assert np.linalg.norm(Kd - fd) / np.linalg.norm(Kd) < 1e-5

    def test_tangent_symmetry(self):
        model = ball_model()
        rng = np.random.default_rng(9)
        D = 0.05 * rng.normal(size=(model.mesh.n_nodes, 2))
        _, K = model.internal_force_and_tangent(D)
        Kd = K.toarray()
        assert np.linalg.norm(Kd - Kd.T) / np.linalg.norm(Kd) < 1e-12

    def test_patch_uniform_stretch(self):
        # A homogeneous stretch on a 2x2-element block must carry the same
        # PK2 stress as a single element under the same deformation gradient.
        model = ball_model(2, 2)
        F = np.diag([1.1, 0.95])
        D = model.mesh.node_coords @ (F - np.eye(2)).T
        gradd = model.quad.gradient(D)
        S, _, _ = pk2_stress(np.eye(2) + gradd, model.params.lam,
                             model.params.mu)
        S1, _, _ = pk2_stress(F, model.params.lam, model.params.mu)
        assert np.allclose(S, S1, atol=1e-12)


class TestGalpha:
    def test_no_dissipation_params(self):
        af, am, beta, gamma = galpha_params(1.0)
        assert (af, am, beta, gamma) == (0.5, 0.5, 0.25, 0.5)

    def test_rho08_params(self):
        af, am, beta, gamma = galpha_params(0.8)
        assert af == pytest.approx(4 / 9, abs=1e-15)
        assert am == pytest.approx(1 / 3, abs=1e-15)
        assert beta == pytest.approx(25 / 81, abs=1e-14)

    def test_newmark_identities(self):
        rng = np.random.default_rng(2)
        prev = SolidState(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)),
                          rng.normal(size=(5, 2)))
        D = prev.D + 0.1 * rng.normal(size=(5, 2))
        beta, gamma, dt = 0.25, 0.5, 0.02
        U, A = newmark_update(D, prev, beta, gamma, dt)
        lhs = prev.D + dt * prev.U + dt * dt * (
            (0.5 - beta) * prev.A + beta * A)
        assert np.allclose(lhs, D, atol=1e-12)
        assert np.allclose(prev.U + dt * ((1 - gamma) * prev.A + gamma * A),
                           U, atol=1e-12)

    def test_single_dof_oscillator_energy(self):
        # Undamped oscillator m*a + k*d = 0, analytic period 2*pi*sqrt(m/k).
        m, k = 2.0, 50.0
        af, am, beta, gamma = galpha_params(1.0)
        T = 2 * np.pi * np.sqrt(m / k)
        dt = T / 200
        D, U, A = 1.0, 0.0, -k / m
        E0 = 0.5 * k * D ** 2 + 0.5 * m * U ** 2
        for _ in range(200):
            # Linear solve of the G-alpha balance for the new displacement.
            c0 = (1 - am) / (beta * dt * dt)
            hist = m * ((1 - am) * (D / (beta * dt * dt) + U / (beta * dt)
                                    + (1 - 2 * beta) / (2 * beta) * A)
                        - am * A) - af * k * D
            Dn = hist / (m * c0 + (1 - af) * k)
            An = (Dn - D) / (beta * dt * dt) - U / (beta * dt) \
                - (1 - 2 * beta) / (2 * beta) * A
            Un = U + dt * ((1 - gamma) * A + gamma * An)
            D, U, A = Dn, Un, An
        E = 0.5 * k * D ** 2 + 0.5 * m * U ** 2
        assert abs(E - E0) / E0 < 1e-3

    def test_static_residual_and_fd_tangent(self):
        model = ball_model()
        rng = np.random.default_rng(11)
        prev = SolidState.rest(model.mesh.n_nodes)
        dv = 0.01 * rng.normal(size=model.dofmap.n_dofs)
        dt = 0.05
        R, K = galpha_residual(model, dv, prev, dt)
        eps = 1e-6
        fd = np.zeros((len(R), len(R)))
        for j in range(len(R)):
            p1, p2 = dv.copy(), dv.copy()
            p1[j] += eps
            p2[j] -= eps
            r1, _ = galpha_residual(model, p1, prev, dt, with_tangent=False)
            r2, _ = galpha_residual(model, p2, prev, dt, with_tangent=False)
            fd[:, j] = (r1 - r2) / (2 * eps)
        Kd = K.toarray()
        assert np.linalg.norm(Kd - fd) / np.linalg.norm(Kd) < 1e-5

    def test_rest_stays_at_rest(self):
        model = ball_model()
        prev = SolidState.rest(model.mesh.n_nodes)
        R, _ = galpha_residual(model, np.zeros(model.dofmap.n_dofs), prev,
                               0.01, with_tangent=False)
        assert np.allclose(R, 0.0, atol=1e-14)

    def test_bad_dt(self):
        model = ball_model()
        with pytest.raises(ConfigurationError):
            galpha_residual(model, np.zeros(model.dofmap.n_dofs),
                            SolidState.rest(model.mesh.n_nodes), 0.0)


def test_mass_matrix_total():
    model = ball_model(3, 3)
    ones = np.ones(model.dofmap.n_dofs)
    # u^T M u with unit x-velocity equals rho * area for each component pair.
    ux = np.zeros(model.dofmap.n_dofs)
    ux[0::2] = 1.0
    assert ux @ model.M @ ux == pytest.approx(1.0, abs=1e-12)
    assert ones @ model.M @ ones == pytest.approx(2.0, abs=1e-12)
