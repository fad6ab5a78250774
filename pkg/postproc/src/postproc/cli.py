"""Command-line report generator for completed run directories."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .artifacts import RunArtifacts, SchemaError
from .figures import plot_histories, plot_line_cut
from .report import run_summary


def _cmd_report(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = [RunArtifacts.load(args.run)]
    if args.compare:
        runs.append(RunArtifacts.load(args.compare))
    written = []

    fig = out / "histories.png"
    plot_histories(runs, fields=("d1", "d2", "f1", "f2"), out_image=fig)
    written.append(fig)

    base = runs[0]
    for i, cut in enumerate(base.line_cuts):
        cuts = [cut]
        labels = [f"{base.name} ({base.mode})"]
        if len(runs) == 2 and i < len(runs[1].line_cuts):
            cuts.append(runs[1].line_cuts[i])
            labels.append(f"{runs[1].name} ({runs[1].mode})")
        fig = out / f"line_cut_{i:02d}.png"
        plot_line_cut(cuts, out_image=fig, labels=labels)
        written.append(fig)

    md = out / "summary.md"
    text = "".join(run_summary(r) + "\n" for r in runs)
    md.write_text(text)
    written.append(md)
    for path in written:
        print(path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hybridfsi-post",
        description="Figures and reports from solver run directories")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("report", help="regenerate figures for a run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--compare", default=None,
                   help="second run directory to overlay")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
