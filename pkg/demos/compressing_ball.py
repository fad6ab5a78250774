"""Compressing ball: a hyperelastic disc squeezed by two opposed jets.

Runs the desk-size preset of the built-in scenario in both discretization
modes. In "hybrid" mode a body-fitted patch rides with the ball and overlaps
the fixed background; in "fixed_grid" mode the solid boundary cuts the
background directly. Both runs write the same artifact formats, and the
vertical probe displacement histories agree to a few percent, which is the
point of the exercise: the moving patch buys interface resolution without
changing the answer. Run:

    python3 demos/compressing_ball.py [out_dir]

then, if the postprocessing package is installed, overlay the histories:

    hybridfsi-post report --run OUT/hybrid --compare OUT/fixed_grid \
        --out OUT/report
"""

import sys
from pathlib import Path

import numpy as np

from hybridfsi.scenario import builtin_scenario, run

out_root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/ball")

hist = {}
for mode in ("hybrid", "fixed_grid"):
    cfg = builtin_scenario("compressing_ball:desk")
    cfg.mode = mode
    out = out_root / mode
    print(f"running compressing_ball:desk in {mode} mode -> {out}")
    summary = run(cfg, out, max_steps=50)  # half the jet ramp, ~1 min
    hist[mode] = np.genfromtxt(out / "series.csv", delimiter=",", names=True)
    print(f"  reached t = {summary['t']:.3f} in {summary['steps']} steps "
          f"(worst geometry-update cycles: {summary['max_cycles']})")

d2h, d2f = hist["hybrid"]["d2"], hist["fixed_grid"]["d2"]
scale = np.max(np.abs(d2h))
print(f"peak probe compression: {scale:.4f}")
print(f"hybrid vs fixed-grid probe deviation: "
      f"{np.max(np.abs(d2h - d2f)) / scale:.2%}")
