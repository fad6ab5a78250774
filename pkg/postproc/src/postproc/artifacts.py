"""Run-directory artifacts: manifest, history table, line cuts.

Reads only the documented file formats a run directory contains
(manifest.json, series.csv, linecut_*.csv, *.vtk snapshot names); it never
imports the solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXPECTED_COLUMNS = ("t", "d1", "d2", "f1", "f2", "iters", "cycles")
SUPPORTED_SCHEMA = 1


class SchemaError(ValueError):
    """The run directory does not match the documented output contract."""


def read_series_csv(path):
    """series.csv as a dict of named columns; validates the header."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    missing = [c for c in EXPECTED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"series file {path} lacks columns: "
                          f"{', '.join(missing)}")
    if not rows:
        raise SchemaError(f"series file {path} contains no samples")
    data = np.array(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}


def read_line_cut_csv(path):
    """Line-cut CSV (crossing annotations as '# crossing,kind,s' comments)."""
    crossings, rows = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# crossing"):
                _, kind, sc = line.lstrip("# ").split(",")
                crossings.append({"s": float(sc), "kind": kind})
            elif line and not line.startswith("s,") and not line.startswith("#"):
                rows.append(line.split(","))
    if not rows:
        raise SchemaError(f"line-cut file {path} contains no samples")
    s = np.array([float(r[0]) for r in rows])
    pts = np.array([[float(r[1]), float(r[2])] for r in rows])
    region = np.array([r[3] for r in rows])
    u = np.array([[float(r[4]), float(r[5])] for r in rows])
    p = np.array([float(r[6]) for r in rows])
    return {"s": s, "points": pts, "u": u, "p": p, "region": region,
            "crossings": crossings}


@dataclass
class RunArtifacts:
    """Everything postprocessing needs from one completed run directory."""

    run_dir: Path
    manifest: dict
    series: dict
    line_cuts: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def name(self):
        return self.manifest.get("scenario", self.run_dir.name)

    @property
    def mode(self):
        return self.manifest.get("mode", "?")

    @classmethod
    def load(cls, run_dir):
        run_dir = Path(run_dir)
        mpath = run_dir / "manifest.json"
        if not mpath.exists():
            raise SchemaError(f"{run_dir} has no manifest.json")
        manifest = json.loads(mpath.read_text())
        if manifest.get("schema_version") != SUPPORTED_SCHEMA:
            raise SchemaError(
                f"unsupported manifest schema "
                f"{manifest.get('schema_version')!r} (expected "
                f"{SUPPORTED_SCHEMA})")
        declared = manifest.get("columns", [])
        missing = [c for c in EXPECTED_COLUMNS if c not in declared]
        if missing:
            raise SchemaError(f"manifest omits series columns: "
                              f"{', '.join(missing)}")
        series = read_series_csv(run_dir / manifest.get("series",
                                                        "series.csv"))
        t = series["t"]
        if np.any(np.diff(t) <= 0):
            raise SchemaError("series time column is not strictly monotone")
        cuts = []
        for entry in manifest.get("line_cuts", []):
            cut = read_line_cut_csv(run_dir / entry["file"])
            cut["t"] = entry.get("t")
            cut["file"] = entry["file"]
            cuts.append(cut)
        snaps = [dict(s) for s in manifest.get("snapshots", [])]
        return cls(run_dir, manifest, series, cuts, snaps)
