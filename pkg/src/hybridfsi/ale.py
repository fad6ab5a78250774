"""Pseudo-structure mesh motion for the embedded fluid patch.

Interior and outer-boundary patch nodes follow a small-strain elastic solve
driven by Dirichlet data on the fluid-solid interface ring; the outer patch
boundary is traction free. The operator is constant, so it is factorized
once per patch topology.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import splu

from .errors import ConfigurationError, MeshDistortionError
from .fem import CooBuilder, DofMap, volume_batch

_I2 = np.eye(2)


class MeshMotionSolver:
    """Linear pseudo-elastic mesh update with a prefactorized free block."""

    def __init__(self, patch_mesh, lam, mu, interface_tag="fsi"):
        if interface_tag not in patch_mesh.node_sets:
            raise ConfigurationError(
                f"patch mesh has no '{interface_tag}' node set")
        self.mesh = patch_mesh
        self.iface_nodes = np.asarray(patch_mesh.node_sets[interface_tag],
                                      dtype=int)
        self.dofmap = DofMap(patch_mesh.n_nodes, 2)
        q = volume_batch(patch_mesh)
        ke = (lam * np.einsum("q,qai,qbk->qaibk", q.w, q.dNdx, q.dNdx)
              + mu * np.einsum("q,qal,qbl,ik->qaibk", q.w, q.dNdx, q.dNdx, _I2)
              + mu * np.einsum("q,qak,qbi->qaibk", q.w, q.dNdx, q.dNdx))
        b = CooBuilder(self.dofmap.n_dofs, self.dofmap.n_dofs)
        dofs = self.dofmap.dofs(q.enodes).reshape(len(q.w), 8)
        b.add(dofs, dofs, ke.reshape(len(q.w), 8, 8))
        K = b.tocsr()

        constrained = np.zeros(self.dofmap.n_dofs, dtype=bool)
        cd = self.dofmap.dofs(self.iface_nodes).reshape(-1)
        constrained[cd] = True
        self.free = np.flatnonzero(~constrained)
        self.cdofs = cd
        self._K_fc = K[self.free][:, cd].tocsc()
        self._lu = splu(K[self.free][:, self.free].tocsc())

    def solve(self, interface_disp):
        """Grid displacement field from interface Dirichlet data.

        interface_disp: (n_iface, 2) displacements in node-set order.
        """
        interface_disp = np.asarray(interface_disp, dtype=float)
        if interface_disp.shape != (len(self.iface_nodes), 2):
            raise ConfigurationError("interface displacement shape mismatch")
        D = np.zeros(self.dofmap.n_dofs)
        D[self.cdofs] = interface_disp.reshape(-1)
        rhs = -self._K_fc @ interface_disp.reshape(-1)
        D[self.free] = self._lu.solve(rhs)
        return self.dofmap.expand(D)

    def check_quality(self, D_grid):
        """Raise MeshDistortion if the displaced patch has inverted elements."""
        coords = self.mesh.node_coords + D_grid
        c = coords[self.mesh.elements]
        worst_det, worst_elem = np.inf, -1
        for k in range(4):
            p = c[:, k]
            e1 = c[:, (k + 1) % 4] - p
            e2 = c[:, (k - 1) % 4] - p
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            i = int(np.argmin(det))
            if det[i] < worst_det:
                worst_det, worst_elem = float(det[i]), i
        if worst_det <= 0.0:
            raise MeshDistortionError(worst_elem, worst_det)
        return worst_det


def grid_velocity(D_grid, D_grid_prev, dt, theta=None, U_grid_prev=None):
    """Discrete grid velocity from consecutive grid displacements.

    Default is the first-order backward difference. Passing theta and the
    previous grid velocity selects the one-step-theta-consistent variant
    u = (D - D_prev)/(theta dt) - (1-theta)/theta * u_prev.
    """
    if dt <= 0:
        raise ConfigurationError("time step must be positive")
    if theta is None or U_grid_prev is None:
        return (np.asarray(D_grid) - np.asarray(D_grid_prev)) / dt
    return ((np.asarray(D_grid) - np.asarray(D_grid_prev)) / (theta * dt)
            - (1.0 - theta) / theta * np.asarray(U_grid_prev))
