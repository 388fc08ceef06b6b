"""Plot per-node benefit, price and case from a sweep.csv written by
`gridclear sweep`.

usage: python plot_sweep.py out/sweep_line/sweep.csv [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt


def main(path, out=None):
    series = defaultdict(list)
    with open(path) as f:
        for r in csv.DictReader(f):
            series[int(r["node"])].append(r)

    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 8))
    for node, rows in sorted(series.items()):
        x = [float(r["sweep_demand"]) for r in rows]
        benefit = [float(r["disconnected_cost"]) - float(r["local_cost"]) for r in rows]
        axes[0].plot(x, benefit, marker="o", label=f"node {node}")
        axes[1].plot(x, [float(r["lambda_star"]) for r in rows], marker="o")
        axes[2].step(x, [int(r["case_id"]) for r in rows], where="mid")
    axes[0].set_ylabel("benefit ($)")
    axes[0].legend()
    axes[1].set_ylabel("price ($/MWh)")
    axes[2].set_ylabel("case")
    axes[2].set_xlabel("load of swept node (MWh)")
    fig.tight_layout()
    if out:
        fig.savefig(out, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main(*sys.argv[1:3])
