#!/usr/bin/env python3
"""Full theory verification: closed-form Monte-Carlo checks plus the
cluster-metric comparison across encoder depths, via the CLI."""

import argparse
import sys
from pathlib import Path

from deeppipe.cli import main as deeppipe


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="runs/theory")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seeds", type=int, default=20)
    args = p.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    code = deeppipe([
        "verify-theory", "--samples", str(args.samples),
        "--cluster-metric", "--seeds", str(args.seeds),
        "--out", str(out / "theory_report.json"),
    ])
    if code != 0:
        return code
    return deeppipe([
        "cluster-metric", "--seeds", str(args.seeds),
        "--out", str(out / "cluster_metric.csv"),
    ])


if __name__ == "__main__":
    sys.exit(main())
