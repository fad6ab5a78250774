"""Markdown reports: convergence-rate tables and run summaries."""

from __future__ import annotations

import numpy as np

from .artifacts import SchemaError


def convergence_report(h, errors, title="Convergence study"):
    """Markdown table of per-level errors with least-squares slopes.

    h: mesh sizes (>= 3 levels, decreasing); errors: dict name -> list of
    errors per level. Slopes that do not indicate decreasing error (slope
    close to zero or negative) are flagged as FAIL.
    """
    h = [float(v) for v in h]
    if len(h) < 3:
        raise SchemaError(f"need at least 3 mesh levels, got {len(h)}")
    for name, errs in errors.items():
        if len(errs) != len(h):
            raise SchemaError(f"{name}: {len(errs)} errors for {len(h)} "
                              "levels")
    lines = [f"# {title}", "",
             "| h | " + " | ".join(errors) + " |",
             "|---" * (1 + len(errors)) + "|"]
    for i, hv in enumerate(h):
        row = [f"{hv:.4g}"] + [f"{errors[name][i]:.4e}" for name in errors]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    slopes = {}
    for name, errs in errors.items():
        slope = float(np.polyfit(np.log(h), np.log(np.asarray(errs,
                                                              dtype=float)),
                                 1)[0])
        slopes[name] = slope
        verdict = "ok" if slope > 0.5 else "FAIL (error does not decrease)"
        lines.append(f"- {name}: least-squares slope **{slope:.2f}** "
                     f"[{verdict}]")
    return "\n".join(lines) + "\n", slopes


def run_summary(run):
    """Short markdown digest of one run's history table."""
    s = run.series
    lines = [f"# Run summary: {run.name} ({run.mode})", "",
             f"- steps: {len(s['t']) - 1}",
             f"- time window: [{s['t'][0]:.6g}, {s['t'][-1]:.6g}]",
             f"- max |d| probe: ({np.max(np.abs(s['d1'])):.4g}, "
             f"{np.max(np.abs(s['d2'])):.4g})",
             f"- max |f|: ({np.max(np.abs(s['f1'])):.4g}, "
             f"{np.max(np.abs(s['f2'])):.4g})",
             f"- iterations/step: max {int(np.max(s['iters']))}, "
             f"mean {np.mean(s['iters'][1:]):.2f}"
             if len(s["iters"]) > 1 else "- iterations/step: n/a",
             f"- worst cycle count: {int(np.max(s['cycles']))}",
             f"- snapshots: {len(run.snapshots)}, line cuts: "
             f"{len(run.line_cuts)}"]
    return "\n".join(lines) + "\n"
