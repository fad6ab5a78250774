"""Embedded-patch shear flow: the smallest composite-domain example.

A steady Couette channel is solved on a background grid while a small
rectangular patch floats in the interior, covering part of the background.
The patch sees the flow only through the interface coupling, yet both
overlapping solutions reproduce the analytic linear profile to solver
precision. Run:

    python3 demos/embedded_patch_shear.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from hybridfsi.driver import DirichletBC, DriverConfig, MonolithicDriver
from hybridfsi.fluid import FluidParams
from hybridfsi.mesh import generate_structured_rect
from hybridfsi.scenario import (sample_line_cut, write_line_cut_csv,
                                write_snapshots)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/shear")
out.mkdir(parents=True, exist_ok=True)

bg = generate_structured_rect((0, 0), (2, 1), 16, 8)
patch = generate_structured_rect((0.55, 0.3), (0.9, 0.4), 8, 4)
shear = lambda x, t: np.column_stack([x[:, 1], np.zeros(len(x))])
driver = MonolithicDriver(
    DriverConfig(dt=1.0, steady=True, pin_pressure=True),
    bg_mesh=bg, fluid_params=FluidParams(rho_f=1.0, mu_f=1.0),
    patch_mesh=patch, patch_motion=lambda t: (0.0, 0.0), patch_ff_tag=None,
    bcs=[DirichletBC("f1", tag, (0, 1), shear)
         for tag in ("left", "right", "bottom", "top")])

state, report = driver.solve_steady()
print(f"converged in {report.iterations} Newton iterations")

exact = np.column_stack([patch.node_coords[:, 1], np.zeros(patch.n_nodes)])
print(f"patch error vs analytic profile: "
      f"{np.max(np.abs(state.U2 - exact)):.2e}")

cut = sample_line_cut(driver, state, (0.7, 0.01), (0.7, 0.99), 101)
write_line_cut_csv(out / "line_cut.csv", cut)
files = write_snapshots(out, "steady", driver, state)
print(f"wrote {', '.join(files.values())} and line_cut.csv to {out}")
