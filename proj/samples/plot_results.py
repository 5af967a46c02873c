#!/usr/bin/env python3
"""Plots for rvo_cli output.

  plot_results.py trials CSV_DIR/trials.csv [-o trials.png]
  plot_results.py sweep  sweep.csv          [-o sweep.png]

`trials` draws per-scenario failure counts for each variant and the RMSE
spread over successful trials. `sweep` draws the failure-rate heatmap over
(p0, pr) from `rvo_cli montecarlo --sweep` and a profile at the median p0.
"""
import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_trials(rows, out):
    fails = defaultdict(lambda: defaultdict(int))
    rmse = defaultdict(list)
    variants = []
    for r in rows:
        if r["variant"] not in variants:
            variants.append(r["variant"])
        fails[r["scenario"]][r["variant"]] += int(r["failed"])
        if r["failed"] == "0" and r["rmse"]:
            rmse[r["variant"]].append(float(r["rmse"]))
    scenarios = sorted(fails)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(12, 4.5))
    width = 0.8 / max(len(variants), 1)
    for i, v in enumerate(variants):
        xs = [k + i * width for k in range(len(scenarios))]
        ax1.bar(xs, [fails[s][v] for s in scenarios], width, label=v)
    ax1.set_xticks([k + 0.4 - width / 2 for k in range(len(scenarios))])
    ax1.set_xticklabels(scenarios, rotation=60, ha="right", fontsize=7)
    ax1.set_ylabel("failed trials")
    ax1.legend()

    ax2.boxplot([rmse[v] or [float("nan")] for v in variants])
    ax2.set_xticks(range(1, len(variants) + 1), variants)
    ax2.set_ylabel("keyframe ATE RMSE (successful trials)")
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def plot_sweep(rows, out):
    p0s = sorted({float(r["p0"]) for r in rows})
    prs = sorted({float(r["pr"]) for r in rows})
    grid = {(float(r["p0"]), float(r["pr"])): r for r in rows}
    emp = [[float(grid[(p, q)]["empirical"]) for p in p0s] for q in prs]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))
    im = ax1.imshow(emp, origin="lower", extent=(p0s[0], p0s[-1], prs[0], prs[-1]), aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax1, label="failure rate")
    ax1.set_xlabel("primary failure probability p0")
    ax1.set_ylabel("recovery failure probability pr")
    ax1.set_title("n = %s" % rows[0]["n"])

    p = p0s[len(p0s) // 2]
    ax2.plot(prs, [float(grid[(p, q)]["analytic"]) for q in prs], label="analytic")
    ax2.plot(prs, [float(grid[(p, q)]["empirical"]) for q in prs], "o", label="simulated")
    ax2.set_xlabel("pr")
    ax2.set_ylabel("failure rate at p0 = %.2f" % p)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("kind", choices=["trials", "sweep"])
    ap.add_argument("csv")
    ap.add_argument("-o", "--out")
    a = ap.parse_args()
    rows = read_rows(a.csv)
    if not rows:
        raise SystemExit("no rows in " + a.csv)
    out = a.out or a.kind + ".png"
    (plot_trials if a.kind == "trials" else plot_sweep)(rows, out)
    print("wrote", out)


if __name__ == "__main__":
    main()
