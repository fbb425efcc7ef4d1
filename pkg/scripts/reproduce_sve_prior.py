#!/usr/bin/env python3
"""Fit, then track the changed/unchanged entropy gap across solver steps."""

import argparse
import csv
import os
import sys
from collections import defaultdict

from diffdecomp.cli import main as cli


def run_cli(argv):
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results/sve_prior")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", default=None, help="flat name=value config file")
    args = ap.parse_args(argv)

    os.makedirs(args.out_dir, exist_ok=True)
    params_path = os.path.join(args.out_dir, "model.params")
    table_path = os.path.join(args.out_dir, "sve_prior.csv")

    base = ["--seed", str(args.seed)]
    if args.config:
        base += ["--config", args.config]
    run_cli(["fit", *base, "--out", params_path])
    run_cli(["sve-prior", *base, "--params", params_path, "--out", table_path])

    # mean gap per step across the eval seeds; step 0 is the raw input field
    gaps = defaultdict(list)
    with open(table_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            if row["gap"]:
                gaps[int(row["step"])].append(float(row["gap"]))
    for step in sorted(gaps):
        mean = sum(gaps[step]) / len(gaps[step])
        print(f"step {step}: mean changed-unchanged gap {mean:+.4f}")
    print(f"table in {table_path}")


if __name__ == "__main__":
    main()
