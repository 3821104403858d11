#!/usr/bin/env python3
"""Run every experiment end to end and (if aqpu-plots is installed) render
the figures.  Outputs land in ./results by default.

    python3 scripts/reproduce_all.py [--outdir results] [--fast]

--fast shrinks accuracies and sample counts for a quick smoke pass.
"""

import argparse
import importlib.util
import pathlib
import subprocess
import sys

from aqpu.cli import main as aqpu_main


def run(args):
    print("aqpu " + " ".join(map(str, args)))
    rc = aqpu_main([str(a) for a in args])
    if rc != 0:
        sys.exit(rc)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--outdir", default="results")
    parser.add_argument("--fast", action="store_true")
    opts = parser.parse_args()
    out = pathlib.Path(opts.outdir)
    out.mkdir(parents=True, exist_ok=True)

    bell_acc = 40 if opts.fast else 80
    sweep = "25,50,100" if opts.fast else "25,50,100,200,400,800,1600"
    switch = "8,16" if opts.fast else "16,64,256"

    run(["bell", "--accuracy", bell_acc, "--solver", "block",
         "--out", out / "evolution.csv"])
    run(["sweep", "--accuracies", sweep, "--out", out / "sweep.csv"])
    run(["clock-stats", "--accuracy", bell_acc, "--out", out / "clock_stats.csv"])
    run(["tradeoff", "--target", "haar:3", "--out", out / "tradeoff.csv"])
    run(["switch", "--accuracies", switch, "--out", out / "switch.csv"])
    run(["reversible", "--accuracy", bell_acc, "--dsigma-tick", 2,
         "--out", out / "reversible.csv"])

    if importlib.util.find_spec("aqpu_plots") is not None:
        for kind, src in (
            ("evolution", "evolution.csv"),
            ("sweep", "sweep.csv"),
            ("tradeoff", "tradeoff.csv"),
        ):
            cmd = [sys.executable, "-m", "aqpu_plots.render",
                   "--kind", kind, "--in", str(out / src),
                   "--out", str(out / f"{kind}.png")]
            if kind == "sweep":
                cmd += ["--summary", str(out / "sweep.summary.json")]
            print(" ".join(cmd))
            subprocess.run(cmd, check=True)
    else:
        print("aqpu-plots not installed; skipping figure rendering")
    return 0


if __name__ == "__main__":
    sys.exit(main())
