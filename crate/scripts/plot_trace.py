"""Plot prices and the duality gap from a trace.csv written by `gridclear run`.

usage: python plot_trace.py out/convergence_full/trace.csv [out.png]
"""
import csv
import sys

import matplotlib.pyplot as plt


def main(path, out=None):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    k = [int(r["k"]) for r in rows]
    lams = sorted(c for c in rows[0] if c.startswith("lambda_"))

    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    for c in lams:
        ax1.plot(k, [float(r[c]) for r in rows], label=f"node {c.split('_')[1]}")
    ax1.set_ylabel("price ($/MWh)")
    ax1.set_yscale("log")
    ax1.legend()
    ax2.semilogy(k, [max(float(r["gap"]), 1e-16) for r in rows])
    ax2.set_ylabel("relative gap")
    ax2.set_xlabel("round")
    fig.tight_layout()
    if out:
        fig.savefig(out, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main(*sys.argv[1:3])
