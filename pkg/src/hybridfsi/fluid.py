"""Stabilized incompressible Navier-Stokes assembly in ALE form.

Implements the Galerkin terms, residual-based SUPG/PSPG/LSIC stabilization
with the metric-tensor tau definitions, facet ghost-penalty terms for the cut
background mesh, and one-step-theta time discretization. The assembled
residual carries the time term in (u - u_prev)/(theta*dt) form, so interface
coupling blocks add to it unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fem import CooBuilder, DofMap, facet_batch, scatter_vector, volume_batch

_I2 = np.eye(2)


@dataclass(frozen=True)
class FluidParams:
    rho_f: float
    mu_f: float
    theta: float = 1.0
    dt: float = 1.0
    steady: bool = False
    C_I: float = 36.0
    c_u: float = 1.0
    c_sigma: float = 1.0
    gamma_c: float = 0.05
    gamma_u: float = 0.05
    gamma_p: float = 0.05

    def __post_init__(self):
        if self.rho_f <= 0 or self.mu_f <= 0:
            raise ConfigurationError("density and viscosity must be positive")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigurationError("theta must lie in (0, 1]")
        if not self.steady and self.dt <= 0:
            raise ConfigurationError("time step must be positive")

    @property
    def nu_f(self):
        return self.mu_f / self.rho_f

    @property
    def sigma(self):
        return 0.0 if self.steady else 1.0 / (self.theta * self.dt)


def tau_M(params, G, c):
    """Momentum stabilization parameter from the element metric tensor.

    tau = ((2 rho/dt)^2 + (rho c) . G . (rho c) + C_I mu^2 G:G)^{-1/2};
    the transient term is dropped in steady mode.
    """
    rc = params.rho_f * np.asarray(c, dtype=float)
    conv = np.einsum("...k,...kl,...l->...", rc, G, rc)
    visc = params.C_I * params.mu_f ** 2 * np.einsum("...kl,...kl->...", G, G)
    trans = 0.0 if params.steady else (2.0 * params.rho_f / params.dt) ** 2
    return 1.0 / np.sqrt(trans + conv + visc)


def tau_C(tau_m, trG):
    return 1.0 / (tau_m * trG)


class FluidModel:
    """One fluid mesh (background or patch) bound to assembly routines."""

    def __init__(self, mesh, params: FluidParams, cut_state=None,
                 ghost_penalty=True, quad_order=2):
        self.mesh = mesh
        self.params = params
        self.cut_state = cut_state
        active = (cut_state.active_nodes if cut_state is not None
                  else np.ones(mesh.n_nodes, dtype=bool))
        self.dofmap = DofMap(mesh.n_nodes, 3, active)  # (u_x, u_y, p)
        self.quad = volume_batch(mesh, cut_state, order=quad_order)
        self.gp_batch = None
        if ghost_penalty and cut_state is not None and len(cut_state.gp_facets):
            self.gp_batch = facet_batch(mesh, cut_state.gp_facets)
        self._udofs = None

    def pack(self, U, P):
        """Interleave nodal velocity (n,2) and pressure (n,) into a dof vector."""
        return self.dofmap.pack(np.column_stack([U, P]))

    def unpack(self, vec):
        full = self.dofmap.expand(vec)
        return full[:, :2], full[:, 2]

    def refresh_geometry(self, coords=None, cut_state=None, quad_order=2):
        """Rebuild quadrature after mesh motion or a new cut configuration."""
        mesh = self.mesh if coords is None else self.mesh.with_coords(coords)
        return FluidModel(mesh, self.params,
                          cut_state if cut_state is not None else self.cut_state,
                          ghost_penalty=self.gp_batch is not None
                          or self.cut_state is None,
                          quad_order=quad_order)

    # -- volume terms ------------------------------------------------------

    def stabilization_state(self, U, grid_vel=None):
        """Per-point tau values and per-facet convective maxima at state U.

        Passing the returned dict back into assemble freezes the
        stabilization parameters, matching the linearization policy (and
        enabling exact finite-difference tangent checks).
        """
        q = self.quad
        u = q.interpolate(np.asarray(U, dtype=float))
        if grid_vel is not None:
            u = u - q.interpolate(grid_vel)
        tm = tau_M(self.params, q.G, u)
        out = {"tau_m": tm, "tau_c": tau_C(tm, q.trG)}
        if self.gp_batch is not None:
            out["c_inf"] = self._facet_cinf(U, grid_vel)
        return out

    def assemble(self, U, P, grid_vel=None, U_prev=None, A_prev=None,
                 body_force=None, with_tangent=True, frozen_stab=None):
        """Residual vector and tangent matrix at nodal state (U, P).

        grid_vel: nodal ALE grid velocity (zero for the background mesh).
        U_prev/A_prev: previous-step velocity and acceleration for the
        one-step-theta time term; ignored in steady mode. frozen_stab: output
        of stabilization_state to evaluate tau at a reference state.
        """
        n = self.dofmap.n_dofs
        R = np.zeros(n)
        Jb = CooBuilder(n, n) if with_tangent else None
        self._volume_terms(R, Jb, U, P, grid_vel, U_prev, A_prev, body_force,
                           with_tangent, frozen_stab)
        if self.gp_batch is not None:
            self._ghost_penalty(R, Jb, U, P, grid_vel, with_tangent,
                                frozen_stab)
        return (R, Jb.tocsr()) if with_tangent else (R, None)

    def _volume_terms(self, R, Jb, U, P, grid_vel, U_prev, A_prev,
                      body_force, with_tangent, frozen_stab=None):
        p = self.params
        q = self.quad
        if len(q.w) == 0:
            return
        rho, mu = p.rho_f, p.mu_f
        u = q.interpolate(U)                     # (Q, 2)
        pr = q.interpolate(P)                    # (Q,)
        gradu = q.gradient(U)                    # (Q, 2, 2): du_i/dx_j
        gradp = q.gradient(P)                    # (Q, 2)
        uhat = np.zeros_like(u) if grid_vel is None else q.interpolate(grid_vel)
        c = u - uhat
        divu = gradu[:, 0, 0] + gradu[:, 1, 1]
        eps = 0.5 * (gradu + np.swapaxes(gradu, 1, 2))

        if p.steady:
            dudt = np.zeros_like(u)
        else:
            up = q.interpolate(U_prev if U_prev is not None else 0.0 * U)
            ap = q.interpolate(A_prev if A_prev is not None else 0.0 * U)
            dudt = (u - up) * p.sigma - (1.0 - p.theta) / p.theta * ap

        bf = np.zeros_like(u)
        if body_force is not None:
            bf = body_force(q.x) if callable(body_force) else q.interpolate(body_force)

        # Q1 second derivatives (constant-Jacobian approx) for r_M's viscous part.
        d2u = np.einsum("qam,qakl->qmkl", np.asarray(U)[q.enodes], q.d2Ndx2)
        lap_u = d2u[:, :, 0, 0] + d2u[:, :, 1, 1]
        grad_div = np.einsum("qkik->qi", d2u)    # d/dx_i (div u)
        visc_strong = mu * (lap_u + grad_div)

        conv = np.einsum("qj,qij->qi", c, gradu)
        r_mom = rho * (dudt + conv) + gradp - visc_strong - rho * bf

        if frozen_stab is not None:
            tau_m, tau_c = frozen_stab["tau_m"], frozen_stab["tau_c"]
        else:
            tau_m = tau_M(p, q.G, c)
            tau_c = tau_C(tau_m, q.trG)

        cdNa = np.einsum("qj,qaj->qa", c, q.dNdx)  # (c . grad) N_a

        # Momentum rows (a, i) and continuity rows (a,).
        mom = (rho * (dudt + conv - bf)[:, None, :] * q.N[:, :, None]
               + 2.0 * mu * np.einsum("qil,qal->qai", eps, q.dNdx)
               - pr[:, None, None] * q.dNdx)
        mom += (tau_m * rho)[:, None, None] * cdNa[:, :, None] * r_mom[:, None, :]
        mom += (tau_c * divu)[:, None, None] * q.dNdx
        cont = (q.N * divu[:, None]
                + tau_m[:, None] * np.einsum("qak,qk->qa", q.dNdx, r_mom))

        dofs = self.dofmap.dofs(q.enodes)        # (Q, 4, 3)
        scatter_vector(R, dofs[:, :, :2], q.w[:, None, None] * mom)
        scatter_vector(R, dofs[:, :, 2], q.w[:, None] * cont)

        if not with_tangent:
            return

        Q = len(q.w)
        ke = np.zeros((Q, 4, 3, 4, 3))
        N, dN = q.N, q.dNdx
        sig = 0.0 if p.steady else p.sigma

        # d r_mom / d u_{b,k} and / d p_b  (tau frozen).
        lap2N = q.d2Ndx2[:, :, 0, 0] + q.d2Ndx2[:, :, 1, 1]    # (Q, 4)
        drm_u = (rho * sig * np.einsum("qb,ik->qbik", N, _I2)
                 + rho * (np.einsum("qb,qik->qbik", N, gradu)
                          + np.einsum("qb,ik->qbik",
                                      np.einsum("qj,qbj->qb", c, dN), _I2))
                 - mu * (np.einsum("qb,ik->qbik", lap2N, _I2)
                         + q.d2Ndx2))
        drm_p = dN                                              # (Q, b, i)

        cdNb = np.einsum("qj,qbj->qb", c, dN)

        # Galerkin momentum block u-u.
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qa,qbik->qaibk", q.w, N,
            rho * (sig * np.einsum("qb,ik->qbik", N, _I2)
                   + np.einsum("qb,qik->qbik", N, gradu)
                   + np.einsum("qb,ik->qbik", cdNb, _I2)))
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qal,qbl,ik->qaibk", q.w * mu, dN, dN, _I2)
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qak,qbi->qaibk", q.w * mu, dN, dN)
        # Galerkin momentum block u-p.
        ke[:, :, :2, :, 2] -= np.einsum("q,qai,qb->qaib", q.w, dN, N)
        # Continuity block p-u.
        ke[:, :, 2, :, :2] += np.einsum("q,qa,qbk->qabk", q.w, N, dN)

        # SUPG: weight W_{a,i} = tau rho (c.dN_a) delta, fully linearized.
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qa,qbik->qaibk", q.w * tau_m * rho, cdNa, drm_u)
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qak,qb,qi->qaibk", q.w * tau_m * rho, dN, N, r_mom)
        ke[:, :, :2, :, 2] += np.einsum(
            "q,qa,qbi->qaib", q.w * tau_m * rho, cdNa, drm_p)
        # PSPG rows.
        ke[:, :, 2, :, :2] += np.einsum(
            "q,qak,qbkj->qabj", q.w * tau_m, dN, drm_u)
        ke[:, :, 2, :, 2] += np.einsum(
            "q,qak,qbk->qab", q.w * tau_m, dN, drm_p)
        # LSIC.
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qai,qbk->qaibk", q.w * tau_c, dN, dN)

        Jb.add(dofs.reshape(Q, 12), dofs.reshape(Q, 12), ke.reshape(Q, 12, 12))

    # -- ghost penalty -----------------------------------------------------

    def _phi_T(self, c_inf, h):
        p = self.params
        return (p.nu_f + p.c_u * c_inf * h
                + p.c_sigma * p.sigma * h * h)

    def _facet_cinf(self, U, grid_vel):
        fb = self.gp_batch
        c_nodal = np.asarray(U, dtype=float)
        if grid_vel is not None:
            c_nodal = c_nodal - grid_vel
        cmag = np.linalg.norm(c_nodal, axis=1)
        cL = cmag[fb.left.enodes].max(axis=1)
        cR = cmag[fb.right.enodes].max(axis=1)
        return np.maximum(cL, cR)

    def _ghost_penalty(self, R, Jb, U, P, grid_vel, with_tangent,
                       frozen_stab=None):
        p = self.params
        fb = self.gp_batch
        if fb is None or len(fb.w) == 0:
            return
        rho = p.rho_f
        if frozen_stab is not None and "c_inf" in frozen_stab:
            c_inf = frozen_stab["c_inf"]
        else:
            c_inf = self._facet_cinf(U, grid_vel)
        phiL = self._phi_T(c_inf, fb.left.h_elem)
        phiR = self._phi_T(c_inf, fb.right.h_elem)
        phi_u = 0.5 * (phiL + phiR)
        phi_cp = 0.5 * (fb.left.h_elem ** 2 / phiL + fb.right.h_elem ** 2 / phiR)
        hF = fb.h_facet

        s_c = p.gamma_c * rho * (p.nu_f + phi_cp * c_inf ** 2
                                 + p.sigma * hF * hF) * hF
        s_u = p.gamma_u * phi_u * rho * hF
        s_p = p.gamma_p * phi_cp / rho * hF

        # Jump operators per basis function: normal derivative and divergence.
        dnL = np.einsum("qai,qi->qa", fb.left.dNdx, fb.normal)
        dnR = np.einsum("qai,qi->qa", fb.right.dNdx, fb.normal)

        dofsL = self.dofmap.dofs(fb.left.enodes)
        dofsR = self.dofmap.dofs(fb.right.enodes)
        Q = len(fb.w)
        # Stack left/right contributions as one 8-node row per point with
        # signed jump coefficients.
        dofs = np.concatenate([dofsL, dofsR], axis=1)        # (Q, 8, 3)
        dn = np.concatenate([dnL, -dnR], axis=1)             # (Q, 8)
        dvx = np.concatenate([fb.left.dNdx, -fb.right.dNdx], axis=1)  # (Q,8,2)

        Un = np.asarray(U)
        Pn = np.asarray(P)
        nodesLR = np.concatenate([fb.left.enodes, fb.right.enodes], axis=1)
        jump_dn_u = np.einsum("qa,qai->qi", dn, Un[nodesLR])     # [d_n u]
        jump_div = np.einsum("qai,qai->q", dvx, Un[nodesLR])     # [div u]
        jump_dn_p = np.einsum("qa,qa->q", dn, Pn[nodesLR])       # [d_n p]

        r_vel = (fb.w * s_c)[:, None, None] * dn[:, :, None] \
            * jump_dn_u[:, None, :] \
            + (fb.w * s_u * jump_div)[:, None, None] * dvx
        r_pre = (fb.w * s_p * jump_dn_p)[:, None] * dn

        scatter_vector(R, dofs[:, :, :2], r_vel)
        scatter_vector(R, dofs[:, :, 2], r_pre)

        if not with_tangent:
            return
        ke = np.zeros((Q, 8, 3, 8, 3))
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qa,qb,ik->qaibk", fb.w * s_c, dn, dn, _I2)
        ke[:, :, :2, :, :2] += np.einsum(
            "q,qai,qbk->qaibk", fb.w * s_u, dvx, dvx)
        ke[:, :, 2, :, 2] += np.einsum("q,qa,qb->qab", fb.w * s_p, dn, dn)
        Jb.add(dofs.reshape(Q, 24), dofs.reshape(Q, 24), ke.reshape(Q, 24, 24))

    def ghost_penalty_energy(self, U, P, grid_vel=None):
        """Quadratic-form value of the ghost-penalty terms (diagnostic)."""
        n = self.dofmap.n_dofs
        R = np.zeros(n)
        Jb = CooBuilder(n, n)
        self._ghost_penalty(R, Jb, U, P, grid_vel, True)
        vec = self.pack(U, P)
        return float(vec @ (Jb.tocsr() @ vec))
