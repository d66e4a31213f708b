#!/usr/bin/env python3
"""Plot a results.csv written by `postsel simulate`.

One panel per (n, m, s, noise) cell group; x axis is the BH level for FDR/power studies with a
level grid and snr otherwise. Error bars are two MC standard errors.
"""
import argparse
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

METRIC = {"fdr": "fdr", "power": "power", "rmse": "rmse", "coverage": "coverage"}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results", help="results.csv from postsel simulate")
    ap.add_argument("--out", default="study.png", help="output image")
    ap.add_argument("--metric", help="metric to plot (default: the study's main metric)")
    args = ap.parse_args()

    df = pd.read_csv(args.results)
    study = df["study"].iloc[0]
    metric = args.metric or METRIC.get(study)
    df = df[(df["metric"] == metric) & (df["method"] != "all")]
    if df.empty:
        print(f"no rows with metric {metric!r}", file=sys.stderr)
        return 1

    by_level = df["level"].notna().any() and df["level"].nunique() > 1
    xcol = "level" if by_level else "snr"
    panel_keys = ["n", "m", "s", "noise"] + (["snr"] if by_level else [])
    panels = list(df.groupby(panel_keys))
    cols = min(4, len(panels))
    rows = (len(panels) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.2 * rows), squeeze=False)
    for ax, (key, part) in zip(axes.flat, panels):
        for method, line in part.groupby("method"):
            line = line.sort_values(xcol)
            ax.errorbar(line[xcol], line["value"], yerr=2 * line["se"].fillna(0), label=method, marker="o", ms=3, capsize=2)
        if by_level and metric == "fdr":
            ax.plot(part[xcol], part[xcol], "k--", lw=0.8)
        if metric == "coverage":
            ax.axhline(0.95, color="k", ls="--", lw=0.8)
        ax.set_title(", ".join(f"{k}={v}" for k, v in zip(panel_keys, key)), fontsize=8)
        ax.set_xlabel(xcol)
        ax.set_ylabel(metric)
    for ax in list(axes.flat)[len(panels):]:
        ax.axis("off")
    axes.flat[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
