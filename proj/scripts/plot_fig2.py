#!/usr/bin/env python3
"""Render the three storage-sweep panels from a `spbuf sweep-storage` output directory."""

import argparse
import csv
import json
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("-o", "--output", type=Path, default=None, help="image file (default: <run_dir>/fig2.png)")
    args = ap.parse_args()
    run = args.run_dir

    fig, (ax_a, ax_b, ax_c) = plt.subplots(1, 3, figsize=(15, 4))

    hists = sorted(run.glob("fig2a_hist_k*.csv"), key=lambda p: int(re.search(r"_k(\d+)$", p.stem).group(1)))
    peak = max((max(int(r["count"]) for r in read_rows(p)) for p in hists), default=1) or 1
    for p in hists:
        rows = read_rows(p)
        k = re.search(r"_k(\d+)$", p.stem).group(1)
        ax_a.plot([float(r["bin_start_ps"]) for r in rows], [int(r["count"]) / peak for r in rows], label=f"k={k}", lw=0.8)
    ax_a.set_xlim(800, 2800)
    ax_a.set_xlabel("time after trigger (ps)")
    ax_a.set_ylabel("normalized counts")
    ax_a.legend(fontsize=7)

    peaks = read_rows(run / "fig2b_peaks.csv")
    ks = [int(r["k"]) for r in peaks]
    amps = [float(r["normalized_amplitude"]) for r in peaks]
    ax_b.plot(ks, amps, "o")
    fit = json.loads((run / "fig2b_lossfit.json").read_text())
    if "slope_db_per_trip" in fit:
        line = [10 ** (-(fit["intercept_db"] + fit["slope_db_per_trip"] * k) / 10) for k in ks]
        ax_b.plot(ks, line, "-", label=f"{fit['slope_db_per_trip']:.3f} dB/trip")
        ax_b.legend()
    ax_b.set_yscale("log")
    ax_b.set_xlabel("round trips k")
    ax_b.set_ylabel("peak amplitude")

    g2 = read_rows(run / "fig2c_g2.csv")
    ax_c.errorbar([int(r["k"]) for r in g2], [float(r["g2"]) for r in g2],
                  yerr=[float(r["stderr"]) for r in g2], fmt="o", capsize=3)
    ax_c.axhline(1.0, color="grey", lw=0.8)
    ax_c.set_xlabel("round trips k")
    ax_c.set_ylabel("g2(0)")

    fig.tight_layout()
    fig.savefig(args.output or run / "fig2.png", dpi=150)


if __name__ == "__main__":
    main()
