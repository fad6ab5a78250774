"""Total-Lagrangian Neo-Hookean solid with Generalized-alpha time stepping.

Plane-strain embedding of the compressible Neo-Hookean law (out-of-plane
stretch equal to one). Internal force and consistent tangent are assembled
from flat quadrature batches; the mass matrix is consistent (not lumped).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ElementInversionError
from .fem import CooBuilder, DofMap, scatter_vector, volume_batch

_I2 = np.eye(2)


def lame_from_engineering(E, nu):
    """Lame parameters from Young's modulus and Poisson ratio."""
    if E <= 0:
        raise ConfigurationError("Young's modulus must be positive")
    if not (-1.0 < nu < 0.5):
        raise ConfigurationError(
            "Poisson ratio must lie in (-1, 0.5); the incompressible limit "
            "is unsupported")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def galpha_params(rho_inf):
    """Generalized-alpha constants from the spectral radius at infinity."""
    if not (0.0 <= rho_inf <= 1.0):
        raise ConfigurationError("rho_inf must lie in [0, 1]")
    alpha_f = rho_inf / (rho_inf + 1.0)
    alpha_m = (2.0 * rho_inf - 1.0) / (rho_inf + 1.0)
    beta = 0.25 * (1.0 - alpha_m + alpha_f) ** 2
    gamma = 0.5 - alpha_m + alpha_f
    return alpha_f, alpha_m, beta, gamma


@dataclass(frozen=True)
class SolidParams:
    rho_s: float
    E_s: float
    nu_s: float
    rho_inf: float = 1.0
    lam: float = field(init=False)
    mu: float = field(init=False)
    alpha_f: float = field(init=False)
    alpha_m: float = field(init=False)
    beta: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        lam, mu = lame_from_engineering(self.E_s, self.nu_s)
        af, am, b, g = galpha_params(self.rho_inf)
        for k, v in (("lam", lam), ("mu", mu), ("alpha_f", af),
                     ("alpha_m", am), ("beta", b), ("gamma", g)):
            object.__setattr__(self, k, v)


@dataclass
class SolidState:
    """Nodal displacement, velocity, acceleration in the reference frame."""

    D: np.ndarray
    U: np.ndarray
    A: np.ndarray

    @classmethod
    def rest(cls, n_nodes):
        z = np.zeros((n_nodes, 2))
        return cls(z.copy(), z.copy(), z.copy())

    def copy(self):
        return SolidState(self.D.copy(), self.U.copy(), self.A.copy())


def pk2_stress(F, lam, mu):
    """Second Piola-Kirchhoff stress of the plane-strain Neo-Hookean law."""
    F = np.asarray(F, dtype=float)
    detF = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(detF <= 0):
        bad = int(np.argmin(detF))
        raise ElementInversionError(bad, float(np.min(detF)))
    C = np.einsum("...ki,...kj->...ij", F, F)
    detC = detF ** 2
    Cinv = np.empty_like(C)
    Cinv[..., 0, 0] = C[..., 1, 1]
    Cinv[..., 1, 1] = C[..., 0, 0]
    Cinv[..., 0, 1] = -C[..., 0, 1]
    Cinv[..., 1, 0] = -C[..., 1, 0]
    Cinv /= detC[..., None, None]
    lnJ = np.log(detF)
    return mu * (_I2 - Cinv) + lam * lnJ[..., None, None] * Cinv, Cinv, lnJ


def material_tangent(Cinv, lnJ, lam, mu):
    """dS/dE fourth-order tensor C_IJKL for the Neo-Hookean law."""
    cc = np.einsum("...ij,...kl->...ijkl", Cinv, Cinv)
    ik = np.einsum("...ik,...jl->...ijkl", Cinv, Cinv)
    il = np.einsum("...il,...jk->...ijkl", Cinv, Cinv)
    coef = (mu - lam * lnJ)[..., None, None, None, None]
    return lam * cc + coef * (ik + il)


class SolidModel:
    """Solid mesh plus material bound to assembly routines."""

    def __init__(self, mesh, params: SolidParams):
        self.mesh = mesh
        self.params = params
        self.dofmap = DofMap(mesh.n_nodes, 2)
        self.quad = volume_batch(mesh)
        self.M = self._mass_matrix()

    def _mass_matrix(self):
        q = self.quad
        b = CooBuilder(self.dofmap.n_dofs, self.dofmap.n_dofs)
        dofs = self.dofmap.dofs(q.enodes)                       # (Q, 4, 2)
        mass = self.params.rho_s * np.einsum("q,qa,qb->qab", q.w, q.N, q.N)
        for c in range(2):
            b.add(dofs[:, :, c], dofs[:, :, c], mass)
        return b.tocsr()

    def internal_force_and_tangent(self, D, with_tangent=True):
        """F_int vector and material+geometric stiffness at displacement D."""
        p, q = self.params, self.quad
        gradd = q.gradient(D)                                   # (Q, 2, 2)
        F = _I2 + gradd
        detF = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
        if np.any(detF <= 0):
            i = int(np.argmin(detF))
            raise ElementInversionError(q.elems[i], float(detF[i]))
        S, Cinv, lnJ = pk2_stress(F, p.lam, p.mu)
        P = np.einsum("qiI,qIJ->qiJ", F, S)
        fint = np.zeros(self.dofmap.n_dofs)
        dofs = self.dofmap.dofs(q.enodes)
        scatter_vector(fint, dofs,
                       np.einsum("q,qiJ,qaJ->qai", q.w, P, q.dNdx))
        if not with_tangent:
            return fint, None
        Cmat = material_tangent(Cinv, lnJ, p.lam, p.mu)
        # A_iJkL = delta_ik S_JL + F_iI C_IJKL F_kK
        A = (np.einsum("ik,qJL->qiJkL", _I2, S)
             + np.einsum("qiI,qIJKL,qkK->qiJkL", F, Cmat, F))
        ke = np.einsum("q,qaJ,qiJkL,qbL->qaibk", q.w, q.dNdx, A, q.dNdx)
        b = CooBuilder(self.dofmap.n_dofs, self.dofmap.n_dofs)
        Qn = len(q.w)
        b.add(dofs.reshape(Qn, 8), dofs.reshape(Qn, 8), ke.reshape(Qn, 8, 8))
        return fint, b.tocsr()


def newmark_update(D, prev: SolidState, beta, gamma, dt):
    """Velocity and acceleration consistent with displacement D at step n."""
    A = ((D - prev.D) / (beta * dt * dt) - prev.U / (beta * dt)
         - (1.0 - 2.0 * beta) / (2.0 * beta) * prev.A)
    U = prev.U + dt * ((1.0 - gamma) * prev.A + gamma * A)
    return U, A


def velocity_displacement_factor(params, dt):
    """d(velocity)/d(displacement) of the Newmark recovery, gamma/(beta*dt)."""
    return params.gamma / (params.beta * dt)


def galpha_residual(model: SolidModel, D, prev: SolidState, dt,
                    f_ext=None, f_ext_prev=None, fint_prev=None,
                    with_tangent=True):
    """Momentum residual R^s of the Generalized-alpha scheme and its tangent.

    R^s = M (1-a_m)/(b dt^2) D + (1-a_f)(F_int(D) - F_ext) - H^{n-1} with
    H^{n-1} collecting all previous-level inertia and force terms. External
    interface coupling forces are added by the monolithic driver on top.
    """
    if dt <= 0:
        raise ConfigurationError("time step must be positive")
    p = model.params
    am, af, beta = p.alpha_m, p.alpha_f, p.beta
    dm = model.dofmap
    Dp, Up, Ap = dm.pack(prev.D), dm.pack(prev.U), dm.pack(prev.A)
    Dv = dm.pack(D) if D.ndim == 2 else np.asarray(D)
    fint, K = model.internal_force_and_tangent(dm.expand(Dv), with_tangent)
    if fint_prev is None:
        fint_prev, _ = model.internal_force_and_tangent(prev.D, False)
    zero = np.zeros(dm.n_dofs)
    fe = zero if f_ext is None else np.asarray(f_ext)
    fep = zero if f_ext_prev is None else np.asarray(f_ext_prev)
    c0 = (1.0 - am) / (beta * dt * dt)
    hist = (model.M @ ((1.0 - am) * (Dp / (beta * dt * dt)
                                     + Up / (beta * dt)
                                     + (1.0 - 2.0 * beta) / (2.0 * beta) * Ap)
                       - am * Ap)
            - af * (fint_prev - fep))
    R = model.M @ (c0 * Dv) + (1.0 - af) * (fint - fe) - hist
    if not with_tangent:
        return R, None
    return R, c0 * model.M + (1.0 - af) * K
