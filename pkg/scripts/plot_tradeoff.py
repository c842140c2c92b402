#!/usr/bin/env python3
"""Plot bias and ROI-noise curves from a merged metrics.csv.

Produces one figure per target: bias vs iteration, noise vs iteration, and
the bias/noise trade-off with one line per (algorithm, beta).

Usage: python scripts/plot_tradeoff.py runs/desk/metrics.csv [--target volume]
                                       [--save out.png]
"""

import argparse
import os
import sys
from collections import defaultdict

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from dynpet.metrics import read_metrics_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("metrics_csv")
    parser.add_argument("--target", default="volume")
    parser.add_argument("--save", default=None)
    args = parser.parse_args()

    rows = [r for r in read_metrics_csv(args.metrics_csv) if r["target"] == args.target]
    if not rows:
        print(f"no rows with target {args.target!r}", file=sys.stderr)
        return 1

    series = defaultdict(list)
    for r in rows:
        label = r["algorithm"]
        if label in ("pgm-pet", "pgd") and r["beta"]:
            label += f" (beta={r['beta']:g})"
        series[label].append((r["iteration"], r["bias_db"], r["noise"]))

    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for label, pts in sorted(series.items()):
        pts.sort()
        it = [p[0] for p in pts]
        bias = [p[1] for p in pts]
        noise = [p[2] for p in pts]
        axes[0].plot(it, bias, label=label)
        axes[1].plot(it, noise, label=label)
        axes[2].plot(noise, bias, marker=".", label=label)
    axes[0].set_xlabel("iteration"), axes[0].set_ylabel("bias (dB)")
    axes[1].set_xlabel("iteration"), axes[1].set_ylabel("ROI noise")
    axes[2].set_xlabel("ROI noise"), axes[2].set_ylabel("bias (dB)")
    axes[1].set_yscale("log"), axes[2].set_xscale("log")
    axes[0].legend(fontsize=7)
    fig.suptitle(f"target: {args.target}")
    fig.tight_layout()

    out = args.save or (os.path.splitext(args.metrics_csv)[0] + f"-{args.target}.png")
    fig.savefig(out, dpi=130)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
