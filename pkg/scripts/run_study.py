#!/usr/bin/env python3
"""Run the ablation, depth-sweep, and regularizer-sensitivity studies.

Each study refits from scratch many times, so the default here is a
reduced problem size (16x16, two channels) that finishes in a few
minutes.  Pass --full to use the package defaults instead, or --config
to supply your own flat name=value file.
"""

import argparse
import os
import sys

from diffdecomp.cli import main as cli

# reduced-size study configuration; rectangles are scaled to the 16x16 grid
STUDY_CONFIG = """\
channels = 2
height = 16
width = 16
patch_side = 4
reduced_channels = 2
steps = 3
rectangles = 2,2,6,6;9,8,5,5
instances = 2
eval_seeds = 5
iterations = 20
k_max = 3
"""


def run_cli(argv):
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results/study")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", default=None, help="flat name=value config file")
    ap.add_argument("--full", action="store_true",
                    help="package-default sizes (much slower)")
    args = ap.parse_args(argv)

    os.makedirs(args.out_dir, exist_ok=True)
    base = ["--seed", str(args.seed)]
    if args.config:
        base += ["--config", args.config]
    elif not args.full:
        cfg_path = os.path.join(args.out_dir, "study.cfg")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            fh.write(STUDY_CONFIG)
        base += ["--config", cfg_path]

    for command, name in (("ablation", "ablation.csv"),
                          ("k-sweep", "ksweep.csv"),
                          ("sensitivity", "sensitivity.csv")):
        out_path = os.path.join(args.out_dir, name)
        print(f"running {command} ...", flush=True)
        run_cli([command, *base, "--out", out_path])
    print(f"tables in {args.out_dir}")


if __name__ == "__main__":
    main()
