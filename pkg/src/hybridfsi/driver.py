"""Monolithic time-stepping driver.

Builds the coupled block residual/Jacobian over background fluid, embedded
patch fluid and solid, runs the Newton loop with function-space-change
cycles, applies predictors, transcribes background fields across cut
configuration changes, and advances the one-step-theta and generalized-alpha
histories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .ale import MeshMotionSolver, grid_velocity
from .coupling import (CouplingParams, FluidFluidInterface, cut_interface,
                       fitted_interface, match_interface_nodes)
from .cutcell import classify_and_cut
from .errors import (ConfigurationError, CycleLimitError, MeshDistortionError,
                     NonlinearDivergenceError, SolverError)
from .fluid import FluidModel, FluidParams
from .mesh import boundary_polyline
from .solid import (SolidModel, SolidParams, SolidState, galpha_residual,
                    newmark_update, velocity_displacement_factor)

log = logging.getLogger(__name__)


@dataclass
class DirichletBC:
    """Strong constraint on selected components of tagged nodes.

    field: "f1", "f2" or "solid"; where: boundary tag name (or a sequence of
    tags, or explicit node ids); comps: constrained components (fluid 0/1 =
    velocity, 2 = pressure); value: constant, array, or callable(x, t).
    """

    field: str
    where: object
    comps: tuple
    value: object = 0.0


@dataclass
class DriverConfig:
    dt: float
    theta: float = 1.0
    t0: float = 0.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_iterations: int = 25
    max_cycles: int = 5
    max_halvings: int = 4
    pin_pressure: bool = False
    quad_order: int = 2
    steady: bool = False
    recompute_prev_force: bool = False

    def __post_init__(self):
        if not self.steady and self.dt <= 0:
            raise ConfigurationError("time step must be positive")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigurationError("theta must lie in (0, 1]")


@dataclass
class FieldState:
    """All unknown fields at one time level (nodal layout per mesh)."""

    t: float
    n: int
    U1: np.ndarray = None
    P1: np.ndarray = None
    A1: np.ndarray = None
    U2: np.ndarray = None
    P2: np.ndarray = None
    A2: np.ndarray = None
    solid: SolidState = None
    D_grid: np.ndarray = None
    cut_state: object = None
    iface_force: np.ndarray = None  # archived solid-row coupling residual

    def copy(self):
        cp = lambda a: None if a is None else a.copy()
        return FieldState(self.t, self.n, cp(self.U1), cp(self.P1),
                          cp(self.A1), cp(self.U2), cp(self.P2), cp(self.A2),
                          None if self.solid is None else self.solid.copy(),
                          cp(self.D_grid), self.cut_state,
                          cp(self.iface_force))


@dataclass
class StepReport:
    n: int
    t: float
    iterations: int
    cycles: int
    residual_history: list = field(default_factory=list)
    predictor_fallback: bool = False


@dataclass
class BlockSystem:
    """Assembled residual blocks and global sparse tangent."""

    names: list
    offsets: dict
    R: np.ndarray
    J: object


def transcribe_background_fields(values, old_active, new_active, coords):
    """Carry nodal values onto a changed active set.

    Nodes active in both configurations keep their values (the old active
    set includes the ghost-extended cut zone). Newly active nodes receive the
    value of the geometrically nearest previously active node, tie-broken to
    the lowest node id. Total function: never fails.
    """
    out = np.array(values, dtype=float, copy=True)
    need = np.asarray(new_active, dtype=bool) & ~np.asarray(old_active,
                                                            dtype=bool)
    if not need.any():
        return out
    donors = np.flatnonzero(old_active)
    if len(donors) == 0:
        return out
    dc = coords[donors]
    for i in np.flatnonzero(need):
        d2 = np.einsum("nk,nk->n", dc - coords[i], dc - coords[i])
        out[i] = values[donors[int(np.argmin(d2))]]
    return out


def sparse_direct_solve(A, b):
    """Deterministic sparse LU solve with a residual guarantee.

    Raises SolverError naming the worst dof when the factorization fails or
    the back-substituted residual is not small.
    """
    A = sp.csc_matrix(A)
    try:
        lu = splu(A)
        x = lu.solve(b)
    except RuntimeError as exc:
        diag = np.abs(A.diagonal())
        raise SolverError(
            f"factorization failed ({exc}); smallest diagonal at dof "
            f"{int(np.argmin(diag))} = {diag.min():.3e}") from exc
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise SolverError(f"non-finite solution entry at dof {bad}")
    nb = np.linalg.norm(b)
    if nb > 0.0:
        rel = np.linalg.norm(A @ x - b) / nb
        if rel > 1e-8:
            raise SolverError(f"linear solve residual {rel:.3e} too large "
                              "(system near singular)")
    return x


class _SpaceChanged(Exception):
    """Internal: the background active dof set changed during a solve."""

    def __init__(self, state):
        self.state = state


def _bc_nodes(mesh, where):
    if isinstance(where, str):
        idx = mesh.boundary_facets_for(where)
        return np.unique(mesh.boundary_facets[idx][:, :2])
    if isinstance(where, (tuple, list)) and where and isinstance(where[0], str):
        idx = np.concatenate([mesh.boundary_facets_for(t) for t in where])
        return np.unique(mesh.boundary_facets[idx][:, :2])
    return np.unique(np.asarray(where, dtype=int))


class MonolithicDriver:
    """Full-implicit hybrid solver over up to three coupled fields.

    Present meshes decide the block structure: background fluid (always
    first), embedded patch fluid, solid. Modes:
      hybrid     - patch fluid around the solid, patch cuts the background
      fixed_grid - no patch; the solid boundary cuts the background directly
      single_mesh - background fluid only (no cutting)
    A patch without a solid moves by the prescribed `patch_motion(t)` law.
    """

    def __init__(self, config: DriverConfig, bg_mesh=None, fluid_params=None,
                 patch_mesh=None, solid_mesh=None, solid_params=None,
                 coupling_params=None, bcs=(), body_force=None,
                 solid_load=None, patch_motion=None, mesh_motion_stiffness=(1.0, 0.4),
                 patch_ff_tag="ff", patch_fsi_tag="fsi", solid_surface_tag="surface",
                 ghost_penalty=True, mode=None):
        self.config = config
        self.bg_mesh = bg_mesh
        self.patch_mesh = patch_mesh
        self.solid_mesh = solid_mesh
        self.bcs = list(bcs)
        self.body_force = dict(body_force or {})
        self.solid_load = solid_load
        self.patch_motion = patch_motion
        self.coupling_params = coupling_params or CouplingParams()
        self.ghost_penalty = ghost_penalty

        if mode is None:
            if patch_mesh is not None:
                mode = "hybrid"
            elif solid_mesh is not None and bg_mesh is not None:
                mode = "fixed_grid"
            elif bg_mesh is not None:
                mode = "single_mesh"
            else:
                mode = "solid_only"
        self.mode = mode

        if bg_mesh is not None or patch_mesh is not None:
            if fluid_params is None:
                raise ConfigurationError("fluid meshes need fluid parameters")
            self.fluid_params = replace(fluid_params, theta=config.theta,
                                        dt=(1.0 if config.steady else config.dt),
                                        steady=config.steady)
        else:
            self.fluid_params = None

        self.solid_model = None
        if solid_mesh is not None:
            if solid_params is None:
                raise ConfigurationError("solid mesh needs solid parameters")
            if config.steady:
                raise ConfigurationError("steady mode cannot carry a solid")
            self.solid_model = SolidModel(solid_mesh, solid_params)
            self._dvel = velocity_displacement_factor(solid_params, config.dt)

        self.ale = None
        self._pairs = None
        if mode == "hybrid" and patch_mesh is not None:
            self._ff_loop = boundary_polyline(patch_mesh, patch_ff_tag)
            if self.solid_model is not None:
                lam, mu = mesh_motion_stiffness
                self.ale = MeshMotionSolver(patch_mesh, lam, mu,
                                            interface_tag=patch_fsi_tag)
                self._pairs = match_interface_nodes(
                    patch_mesh, solid_mesh, patch_fsi_tag, solid_surface_tag)
            elif patch_motion is None:
                raise ConfigurationError(
                    "patch without a solid needs a prescribed patch_motion")
        if mode == "fixed_grid":
            self._solid_loop = boundary_polyline(solid_mesh, solid_surface_tag)

        self._geo = None

    # -- geometry ---------------------------------------------------------

    def _patch_displacement(self, Ds, t):
        if self.solid_model is not None:
            ring = self.ale.iface_nodes
            disp = np.asarray(Ds)[[self._pairs[int(i)] for i in ring]]
            return self.ale.solve(disp)
        d = np.asarray(self.patch_motion(t), dtype=float)
        if d.ndim == 1:
            d = np.tile(d, (self.patch_mesh.n_nodes, 1))
        return d

    def _geometry(self, Ds, t, D_grid_prev):
        """Cut, refresh the fluid models and rebuild interface operators."""
        geo = {"D_grid": None, "m2": None, "ff": None, "fs": None,
               "grid_vel": None}
        if self.mode == "single_mesh" or self.bg_mesh is None:
            if self.bg_mesh is not None:
                geo["m1"] = FluidModel(self.bg_mesh, self.fluid_params,
                                       quad_order=self.config.quad_order)
            else:
                geo["m1"] = None
            return geo
        if self.mode == "hybrid":
            D_grid = self._patch_displacement(Ds, t)
            if self.ale is not None:
                self.ale.check_quality(D_grid)
            coords = self.patch_mesh.node_coords + D_grid
            cutter = coords[self._ff_loop]
            cs = classify_and_cut(self.bg_mesh, cutter,
                                  order=self.config.quad_order)
            m1 = FluidModel(self.bg_mesh, self.fluid_params, cut_state=cs,
                            ghost_penalty=self.ghost_penalty,
                            quad_order=self.config.quad_order)
            m2 = FluidModel(self.patch_mesh.with_coords(coords),
                            self.fluid_params,
                            quad_order=self.config.quad_order)
            geo.update(D_grid=D_grid, cut_state=cs, m1=m1, m2=m2)
            geo["ff"] = FluidFluidInterface(m1, m2, cs.interface_quadrature,
                                            self._ff_loop)
            if self.solid_model is not None:
                geo["fs"] = fitted_interface(m2, self.solid_model, self._pairs)
            if not self.config.steady:
                prev = (np.zeros_like(D_grid) if D_grid_prev is None
                        else D_grid_prev)
                geo["grid_vel"] = grid_velocity(D_grid, prev, self.config.dt)
            return geo
        # fixed_grid: the deformed solid boundary cuts the background mesh.
        coords_s = self.solid_mesh.node_coords + np.asarray(Ds)
        cutter = coords_s[self._solid_loop]
        cs = classify_and_cut(self.bg_mesh, cutter,
                              order=self.config.quad_order)
        m1 = FluidModel(self.bg_mesh, self.fluid_params, cut_state=cs,
                        ghost_penalty=self.ghost_penalty,
                        quad_order=self.config.quad_order)
        geo.update(cut_state=cs, m1=m1)
        geo["fs"] = cut_interface(m1, self.solid_model,
                                  cs.interface_quadrature, self._solid_loop,
                                  solid_coords=coords_s)
        return geo

    def _active(self, geo):
        cs = geo.get("cut_state")
        if cs is None:
            return None
        return np.asarray(cs.active_nodes, dtype=bool)

    # -- initial and predicted states -------------------------------------

    def initial_state(self, U1=None, P1=None, U2=None, P2=None, solid=None):
        nb = self.bg_mesh.n_nodes if self.bg_mesh is not None else 0
        np_ = self.patch_mesh.n_nodes if self.patch_mesh is not None else 0
        z2 = lambda n: np.zeros((n, 2))
        st = FieldState(self.config.t0, 0)
        if self.bg_mesh is not None:
            st.U1 = z2(nb) if U1 is None else np.array(U1, dtype=float)
            st.P1 = np.zeros(nb) if P1 is None else np.array(P1, dtype=float)
            st.A1 = z2(nb)
        if self.patch_mesh is not None:
            st.U2 = z2(np_) if U2 is None else np.array(U2, dtype=float)
            st.P2 = np.zeros(np_) if P2 is None else np.array(P2, dtype=float)
            st.A2 = z2(np_)
        if self.solid_model is not None:
            st.solid = solid or SolidState.rest(self.solid_mesh.n_nodes)
        geo = self._geometry(None if st.solid is None else st.solid.D,
                             st.t, None)
        st.D_grid = geo.get("D_grid")
        st.cut_state = geo.get("cut_state")
        if geo.get("fs") is not None:
            Us = st.solid.U
            out = geo["fs"].assemble(st.U2 if self.mode == "hybrid" else st.U1,
                                     st.P2 if self.mode == "hybrid" else st.P1,
                                     Us, self._dvel,
                                     params=self.coupling_params,
                                     grid_vel2=geo.get("grid_vel"),
                                     with_tangent=False)
            st.iface_force = out.R2
        self._geo = geo
        return st

    def predict(self, prev: FieldState):
        """Constant-velocity solid predictor plus predictive mesh update."""
        t_new = prev.t + self.config.dt
        state = prev.copy()
        state.t, state.n = t_new, prev.n + 1
        fallback = False
        if state.solid is not None:
            D_pred = prev.solid.D + self.config.dt * prev.solid.U
            try:
                geo = self._geometry(D_pred, t_new, prev.D_grid)
                state.solid.D = D_pred
            except MeshDistortionError:
                log.warning("predictive mesh update failed at t=%.6g; "
                            "falling back to zero-increment prediction", t_new)
                fallback = True
                geo = self._geometry(prev.solid.D, t_new, prev.D_grid)
        else:
            geo = self._geometry(None, t_new, prev.D_grid)
        state.D_grid = geo.get("D_grid")
        state.cut_state = geo.get("cut_state")
        self._transcribe_into(state, prev, geo)
        self._geo = geo
        return state, fallback

    def _transcribe_into(self, state, prev, geo):
        """Refresh background nodal fields for the active set of `geo`."""
        new_act = self._active(geo)
        if new_act is None or prev.cut_state is None:
            return
        old_act = np.asarray(prev.cut_state.active_nodes, dtype=bool)
        coords = self.bg_mesh.node_coords
        state.U1 = transcribe_background_fields(state.U1, old_act, new_act,
                                                coords)
        state.P1 = transcribe_background_fields(state.P1[:, None], old_act,
                                                new_act, coords)[:, 0]
        state.A1 = transcribe_background_fields(state.A1, old_act, new_act,
                                                coords)

    # -- assembly ---------------------------------------------------------

    def _blocks(self, geo):
        names = []
        if geo.get("m1") is not None:
            names.append("f1")
        if geo.get("m2") is not None:
            names.append("f2")
        if self.solid_model is not None:
            names.append("s")
        sizes = {"f1": geo["m1"].dofmap.n_dofs if "f1" in names else 0,
                 "f2": geo["m2"].dofmap.n_dofs if "f2" in names else 0,
                 "s": self.solid_model.dofmap.n_dofs if "s" in names else 0}
        offsets, off = {}, 0
        for nm in names:
            offsets[nm] = (off, off + sizes[nm])
            off += sizes[nm]
        return names, offsets, off

    def _body(self, name, t):
        f = self.body_force.get(name)
        if f is None:
            return None
        return lambda x: f(x, t)

    def _history(self, state, prev):
        """Previous-step fields on the current active set."""
        if prev is None:
            return {}
        h = {}
        if state.U1 is not None and prev.cut_state is not None:
            act_old = np.asarray(prev.cut_state.active_nodes, dtype=bool)
            act_new = self._active(self._geo)
            if act_new is not None:
                coords = self.bg_mesh.node_coords
                h["U1"] = transcribe_background_fields(prev.U1, act_old,
                                                       act_new, coords)
                h["A1"] = transcribe_background_fields(prev.A1, act_old,
                                                       act_new, coords)
                return h
        if prev.U1 is not None:
            h["U1"], h["A1"] = prev.U1, prev.A1
        return h

    def freeze_stabilization(self, state: FieldState):
        """Stabilization/penalty scalings pinned at the given state.

        Passing the result into assemble_global makes the residual linear in
        those scalings, so finite differences of the residual reproduce the
        assembled tangent exactly (the declared linearization policy).
        """
        geo = self._geo
        fr = {}
        if geo.get("m1") is not None:
            fr["f1"] = geo["m1"].stabilization_state(state.U1)
        if geo.get("m2") is not None:
            fr["f2"] = geo["m2"].stabilization_state(state.U2,
                                                     geo.get("grid_vel"))
        if geo.get("ff") is not None:
            fr["ff"] = geo["ff"].scalings(state.U1, state.U2,
                                          geo.get("grid_vel"),
                                          params=self.coupling_params)
        if geo.get("fs") is not None:
            Uf = state.U2 if self.mode == "hybrid" else state.U1
            fr["fs"] = geo["fs"].scalings(Uf, geo.get("grid_vel"),
                                          params=self.coupling_params)
        return fr

    def assemble_global(self, state: FieldState, prev: FieldState,
                        with_tangent=True, frozen=None):
        """Residual and tangent of the coupled system at the iterate."""
        geo = self._geo
        frozen = frozen or {}
        names, offsets, n = self._blocks(geo)
        R = np.zeros(n)
        Jb = {} if with_tangent else None
        hist = self._history(state, prev)
        cp = self.coupling_params
        t = state.t

        def put(dst, vec):
            a, b = offsets[dst]
            R[a:b] += vec

        def putJ(r, c, mat):
            if with_tangent and mat is not None:
                key = (r, c)
                Jb[key] = mat if key not in Jb else Jb[key] + mat

        if "f1" in names:
            m1 = geo["m1"]
            r, J = m1.assemble(state.U1, state.P1, grid_vel=None,
                               U_prev=hist.get("U1"), A_prev=hist.get("A1"),
                               body_force=self._body("f1", t),
                               with_tangent=with_tangent,
                               frozen_stab=frozen.get("f1"))
            put("f1", r)
            putJ("f1", "f1", J)
        if "f2" in names:
            m2 = geo["m2"]
            r, J = m2.assemble(state.U2, state.P2, grid_vel=geo["grid_vel"],
                               U_prev=None if prev is None else prev.U2,
                               A_prev=None if prev is None else prev.A2,
                               body_force=self._body("f2", t),
                               with_tangent=with_tangent,
                               frozen_stab=frozen.get("f2"))
            put("f2", r)
            putJ("f2", "f2", J)
        if geo.get("ff") is not None:
            out = geo["ff"].assemble(state.U1, state.P1, state.U2, state.P2,
                                     params=cp, grid_vel2=geo["grid_vel"],
                                     with_tangent=with_tangent,
                                     frozen=frozen.get("ff"))
            put("f1", out.R1)
            put("f2", out.R2)
            putJ("f1", "f1", out.J11)
            putJ("f1", "f2", out.J12)
            putJ("f2", "f1", out.J21)
            putJ("f2", "f2", out.J22)
        fs_solid_rows = None
        if geo.get("fs") is not None:
            fl = "f2" if self.mode == "hybrid" else "f1"
            Uf = state.U2 if fl == "f2" else state.U1
            Pf = state.P2 if fl == "f2" else state.P1
            Us, _ = newmark_update(state.solid.D, prev.solid,
                                   self.solid_model.params.beta,
                                   self.solid_model.params.gamma,
                                   self.config.dt) if prev is not None else (
                state.solid.U, None)
            state.solid.U = Us
            out = geo["fs"].assemble(Uf, Pf, Us, self._dvel, params=cp,
                                     grid_vel2=geo.get("grid_vel"),
                                     with_tangent=with_tangent,
                                     frozen=frozen.get("fs"))
            put(fl, out.R1)
            put("s", out.R2)
            fs_solid_rows = out.R2
            putJ(fl, fl, out.J11)
            putJ(fl, "s", out.J12)
            putJ("s", fl, out.J21)
            putJ("s", "s", out.J22)
        if "s" in names:
            sm = self.solid_model
            af = sm.params.alpha_f
            fe = None if self.solid_load is None else self.solid_load(t)
            fep = None
            if self.solid_load is not None and prev is not None:
                fep = self.solid_load(prev.t)
            rs, Ks = galpha_residual(
                sm, state.solid.D,
                prev.solid if prev is not None else SolidState.rest(
                    self.solid_mesh.n_nodes),
                self.config.dt, f_ext=fe, f_ext_prev=fep,
                with_tangent=with_tangent)
            put("s", rs / (1.0 - af))
            if prev is not None and prev.iface_force is not None:
                # - alpha_f/(1-alpha_f) F^{s,n-1} with F^{s,n-1} = -C^{sf2,n-1}
                put("s", af / (1.0 - af) * prev.iface_force)
            putJ("s", "s", None if Ks is None else Ks / (1.0 - af))
        J = None
        if with_tangent:
            grid = [[Jb.get((r, c)) for c in names] for r in names]
            for i, r_ in enumerate(names):
                if grid[i][i] is None:
                    a, b = offsets[r_]
                    grid[i][i] = sp.csr_matrix((b - a, b - a))
            J = sp.bmat(grid, format="csr")
        return BlockSystem(names, offsets, R, J), fs_solid_rows

    # -- constraints ------------------------------------------------------

    def _field_coords(self, name):
        if name == "f1":
            return self.bg_mesh.node_coords
        if name == "f2":
            return self._geo["m2"].mesh.node_coords
        return self.solid_mesh.node_coords

    def _field_dofmap(self, name):
        if name == "f1":
            return self._geo["m1"].dofmap
        if name == "f2":
            return self._geo["m2"].dofmap
        return self.solid_model.dofmap

    def _constraints(self, offsets, t):
        """Global dof ids and target values of all strong constraints."""
        dofs, vals = [], []
        name_of = {"f1": "f1", "f2": "f2", "solid": "s", "s": "s"}
        for bc in self.bcs:
            nm = name_of[bc.field]
            if nm not in offsets:
                continue
            mesh = (self.bg_mesh if nm == "f1" else
                    self.patch_mesh if nm == "f2" else self.solid_mesh)
            nodes = _bc_nodes(mesh, bc.where)
            dm = self._field_dofmap(nm)
            nd = dm.dofs(nodes)
            active = np.all(nd >= 0, axis=1)
            nodes, nd = nodes[active], nd[active]
            if len(nodes) == 0:
                continue
            x = self._field_coords(nm)[nodes]
            v = bc.value(x, t) if callable(bc.value) else bc.value
            v = np.broadcast_to(np.asarray(v, dtype=float),
                                (len(nodes), len(bc.comps)))
            base = offsets[nm][0]
            for j, comp in enumerate(bc.comps):
                dofs.append(base + nd[:, comp])
                vals.append(v[:, j])
        if self.config.pin_pressure and ("f1" in offsets or "f2" in offsets):
            nm = "f1" if "f1" in offsets else "f2"
            dm = self._field_dofmap(nm)
            node = int(np.flatnonzero(dm.index >= 0)[0])
            dofs.append(np.array([offsets[nm][0] + dm.dofs([node])[0, 2]]))
            vals.append(np.zeros(1))
        if not dofs:
            return np.zeros(0, dtype=int), np.zeros(0)
        d = np.concatenate(dofs)
        v = np.concatenate(vals)
        # Later constraints win on duplicates (deterministic order).
        _, last = np.unique(d[::-1], return_index=True)
        keep = len(d) - 1 - last
        return d[keep], v[keep]

    def _pack_state(self, state, offsets):
        x = np.zeros(max(b for _, b in offsets.values()))
        if "f1" in offsets:
            a, b = offsets["f1"]
            x[a:b] = self._geo["m1"].pack(state.U1, state.P1)
        if "f2" in offsets:
            a, b = offsets["f2"]
            x[a:b] = self._geo["m2"].pack(state.U2, state.P2)
        if "s" in offsets:
            a, b = offsets["s"]
            x[a:b] = self.solid_model.dofmap.pack(state.solid.D)
        return x

    def _unpack_state(self, state, x, offsets):
        if "f1" in offsets:
            a, b = offsets["f1"]
            state.U1, state.P1 = self._geo["m1"].unpack(x[a:b])
        if "f2" in offsets:
            a, b = offsets["f2"]
            state.U2, state.P2 = self._geo["m2"].unpack(x[a:b])
        if "s" in offsets:
            a, b = offsets["s"]
            state.solid.D = self.solid_model.dofmap.expand(x[a:b])

    @staticmethod
    def _apply_dirichlet(system, x, cdofs, cvals, with_tangent=True):
        R = system.R.copy()
        R[cdofs] = x[cdofs] - cvals
        J = None
        if with_tangent and system.J is not None:
            n = len(R)
            mask = np.ones(n)
            mask[cdofs] = 0.0
            J = sp.diags(mask) @ system.J + sp.coo_matrix(
                (np.ones(len(cdofs)), (cdofs, cdofs)), shape=(n, n))
            J = J.tocsr()
        return R, J

    # -- Newton loop ------------------------------------------------------

    def _residual_only(self, state, prev, x, offsets, cdofs, cvals):
        trial = state.copy()
        self._unpack_state(trial, x, offsets)
        system, _ = self.assemble_global(trial, prev, with_tangent=False)
        R, _ = self._apply_dirichlet(system, x, cdofs, cvals,
                                     with_tangent=False)
        return R

    def newton_solve(self, state: FieldState, prev: FieldState,
                     report: StepReport):
        """Iterate to convergence at the current geometry; raise
        _SpaceChanged when the background active set changes."""
        cfg = self.config
        names, offsets, _ = self._blocks(self._geo)
        ref_norms = None
        for it in range(1, cfg.max_iterations + 1):
            system, _ = self.assemble_global(state, prev)
            names, offsets = system.names, system.offsets
            x = self._pack_state(state, offsets)
            cdofs, cvals = self._constraints(offsets, state.t)
            R, J = self._apply_dirichlet(system, x, cdofs, cvals)
            norms = {nm: np.linalg.norm(R[a:b], np.inf)
                     for nm, (a, b) in offsets.items()}
            report.residual_history.append(max(norms.values(), default=0.0))
            report.iterations += 1
            if ref_norms is None:
                ref_norms = {nm: max(v, cfg.abs_tol) for nm, v in norms.items()}
            if all(norms[nm] <= max(cfg.abs_tol,
                                    cfg.rel_tol * ref_norms[nm])
                   for nm in norms):
                return state
            dx = sparse_direct_solve(J, -R)
            # Residual-based backtracking at frozen geometry.
            base = np.linalg.norm(R)
            alpha = 1.0
            for _ in range(cfg.max_halvings):
                trial_norm = np.linalg.norm(self._residual_only(
                    state, prev, x + alpha * dx, offsets, cdofs, cvals))
                if trial_norm <= base or not np.isfinite(trial_norm):
                    break
                alpha *= 0.5
            self._unpack_state(state, x + alpha * dx, offsets)
            # Extra-step mesh update: recompute grid motion and recut at the
            # new iterate; a changed active set restarts the cycle.
            if self.mode in ("hybrid", "fixed_grid") and \
                    self.solid_model is not None:
                old_active = self._active(self._geo)
                geo = self._geometry(state.solid.D, state.t,
                                     None if prev is None else prev.D_grid)
                new_active = self._active(geo)
                changed = (old_active is not None and new_active is not None
                           and not np.array_equal(old_active, new_active))
                if changed:
                    act_prev = old_active
                    coords = self.bg_mesh.node_coords
                    state.U1 = transcribe_background_fields(
                        state.U1, act_prev, new_active, coords)
                    state.P1 = transcribe_background_fields(
                        state.P1[:, None], act_prev, new_active, coords)[:, 0]
                    state.A1 = transcribe_background_fields(
                        state.A1, act_prev, new_active, coords)
                self._geo = geo
                state.D_grid = geo.get("D_grid")
                state.cut_state = geo.get("cut_state")
                if changed:
                    raise _SpaceChanged(state)
            # Scaled increment criterion paired with the residual check.
            dxn = {nm: np.linalg.norm(alpha * dx[a:b], np.inf)
                   for nm, (a, b) in offsets.items()}
            xn = {nm: max(np.linalg.norm(x[a:b], np.inf), 1.0)
                  for nm, (a, b) in offsets.items()}
            if all(dxn[nm] <= max(cfg.abs_tol, cfg.rel_tol * xn[nm])
                   for nm in offsets):
                system, _ = self.assemble_global(state, prev)
                x = self._pack_state(state, offsets)
                R, _ = self._apply_dirichlet(system, x, cdofs, cvals,
                                             with_tangent=False)
                norms = {nm: np.linalg.norm(R[a:b], np.inf)
                         for nm, (a, b) in offsets.items()}
                if all(norms[nm] <= max(cfg.abs_tol,
                                        cfg.rel_tol * ref_norms[nm])
                       for nm in norms):
                    report.residual_history.append(max(norms.values()))
                    return state
        raise NonlinearDivergenceError(report.residual_history)

    # -- time stepping ----------------------------------------------------

    def step(self, prev: FieldState):
        """One Algorithm-1 time step: predict, cycle, solve, advance."""
        state, fallback = self.predict(prev)
        report = StepReport(state.n, state.t, 0, 1,
                            predictor_fallback=fallback)
        for cycle in range(self.config.max_cycles):
            try:
                state = self.newton_solve(state, prev, report)
                break
            except _SpaceChanged as sc:
                state = sc.state
                report.cycles += 1
        else:
            raise CycleLimitError(self.config.max_cycles)
        state = self.advance_time(state, prev)
        return state, report

    def advance_time(self, state: FieldState, prev: FieldState):
        """Finalize histories after convergence (OST and Newmark updates)."""
        cfg = self.config
        if not cfg.steady and state.U1 is not None and prev is not None:
            hist = self._history(state, prev)
            th = cfg.theta
            state.A1 = ((state.U1 - hist["U1"]) / (th * cfg.dt)
                        - (1.0 - th) / th * hist["A1"])
        if not cfg.steady and state.U2 is not None and prev is not None:
            th = cfg.theta
            state.A2 = ((state.U2 - prev.U2) / (th * cfg.dt)
                        - (1.0 - th) / th * prev.A2)
        if state.solid is not None and prev is not None:
            p = self.solid_model.params
            U, A = newmark_update(state.solid.D, prev.solid, p.beta, p.gamma,
                                  cfg.dt)
            state.solid.U, state.solid.A = U, A
        if self._geo.get("fs") is not None:
            fl = "f2" if self.mode == "hybrid" else "f1"
            Uf = state.U2 if fl == "f2" else state.U1
            Pf = state.P2 if fl == "f2" else state.P1
            out = self._geo["fs"].assemble(Uf, Pf, state.solid.U, self._dvel,
                                           params=self.coupling_params,
                                           grid_vel2=self._geo.get("grid_vel"),
                                           with_tangent=False)
            state.iface_force = out.R2
        return state

    def solve_steady(self, state=None):
        """Single Newton solve with steady fluid params (no time terms)."""
        if not self.config.steady:
            raise ConfigurationError("driver not configured for steady mode")
        if state is None:
            state = self.initial_state()
        report = StepReport(0, state.t, 0, 1)
        state = self.newton_solve(state, None, report)
        return state, report


def save_checkpoint(path, state: FieldState):
    """Serialize a FieldState; geometry is reconstructed on load."""
    data = {"t": state.t, "n": state.n}
    for key in ("U1", "P1", "A1", "U2", "P2", "A2", "D_grid", "iface_force"):
        v = getattr(state, key)
        if v is not None:
            data[key] = v
    if state.solid is not None:
        data["solid_D"] = state.solid.D
        data["solid_U"] = state.solid.U
        data["solid_A"] = state.solid.A
    np.savez(path, **data)


def load_checkpoint(path, driver: MonolithicDriver):
    """Rebuild a FieldState (and the driver geometry) from a checkpoint."""
    with np.load(path) as z:
        st = FieldState(float(z["t"]), int(z["n"]))
        for key in ("U1", "P1", "A1", "U2", "P2", "A2", "D_grid",
                    "iface_force"):
            if key in z:
                setattr(st, key, z[key])
        if "solid_D" in z:
            st.solid = SolidState(z["solid_D"], z["solid_U"], z["solid_A"])
    geo = driver._geometry(None if st.solid is None else st.solid.D, st.t,
                           None)
    st.cut_state = geo.get("cut_state")
    driver._geo = geo
    return st
