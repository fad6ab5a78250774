"""History and line-cut figures from run artifacts.

All figures are rendered with the Agg backend at fixed size/dpi and without
embedded metadata, so identical inputs yield byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .artifacts import SchemaError

FIELD_LABELS = {"d1": "displacement d1", "d2": "displacement d2",
                "f1": "force f1", "f2": "force f2",
                "iters": "iterations", "cycles": "cycles"}


def _save(fig, out_image):
    fig.savefig(out_image, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_histories(runs, fields=("d2", "f2"), out_image="histories.png"):
    """Overlaid time histories for one or more runs.

    runs: list of RunArtifacts. With exactly two runs the maximum relative
    deviation between them is annotated per field.
    """
    if not runs:
        raise SchemaError("no runs given")
    for run in runs:
        for f in fields:
            if f not in run.series:
                raise SchemaError(f"run {run.name} lacks series column {f!r}")
    fig, axes = plt.subplots(len(fields), 1, figsize=(7, 2.6 * len(fields)),
                             sharex=True, squeeze=False)
    for ax, fname in zip(axes[:, 0], fields):
        for run in runs:
            ax.plot(run.series["t"], run.series[fname],
                    label=f"{run.name} ({run.mode})")
        ax.set_ylabel(FIELD_LABELS.get(fname, fname))
        ax.grid(True, alpha=0.3)
        if len(runs) == 2:
            a, b = runs
            n = min(len(a.series["t"]), len(b.series["t"]))
            ya, yb = a.series[fname][:n], b.series[fname][:n]
            scale = max(float(np.max(np.abs(ya))), 1e-300)
            dev = float(np.max(np.abs(ya - yb))) / scale
            ax.set_title(f"max relative deviation {dev:.2%}", fontsize=9)
    axes[0, 0].legend(fontsize=8)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    _save(fig, out_image)
    return out_image


def plot_line_cut(cuts, out_image="line_cut.png", labels=None):
    """Velocity/pressure profiles along a cut, one curve per run.

    Vertical markers show the annotated interface crossings: dashed for
    fluid-fluid overlap boundaries, thick solid for fluid-solid interfaces.
    NaN samples (covered regions) appear as gaps.
    """
    if not cuts:
        raise SchemaError("no line cuts given")
    labels = labels or [f"run {i}" for i in range(len(cuts))]
    fig, (ax_u, ax_p) = plt.subplots(1, 2, figsize=(10, 3.6))
    for cut, lab in zip(cuts, labels):
        ax_u.plot(cut["s"], cut["u"][:, 0], label=f"{lab} u1")
        ax_u.plot(cut["s"], cut["u"][:, 1], "--", label=f"{lab} u2")
        ax_p.plot(cut["s"], cut["p"], label=lab)
    for ax in (ax_u, ax_p):
        for c in cuts[0]["crossings"]:
            if c["kind"] == "fluid_solid":
                ax.axvline(c["s"], color="k", lw=2.0, alpha=0.6)
            else:
                ax.axvline(c["s"], color="k", ls="--", lw=0.8, alpha=0.6)
        ax.set_xlabel("arc-length parameter s")
        ax.grid(True, alpha=0.3)
    ax_u.set_ylabel("velocity")
    ax_p.set_ylabel("pressure")
    ax_u.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_image)
    return out_image
