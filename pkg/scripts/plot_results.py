"""Plot a results.csv written by ``misopos sweep`` (RMSE against bounds).

Needs matplotlib (``pip install .[plot]``).
"""

import argparse
from pathlib import Path

import numpy as np

from misopos.experiments import BOUND_LABEL, ResultTable

PANELS = (("rmse_d_m", "crlb_d_m", "distance [m]"),
          ("rmse_theta_rad", "crlb_theta_rad", "angle [rad]"),
          ("rmse_pos_m", "peb_m", "position [m]"))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("csv", type=Path)
    p.add_argument("--xlabel", default="axis value")
    p.add_argument("--out", type=Path, help="image file (default: next to the CSV)")
    args = p.parse_args()

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    table = ResultTable.from_csv(args.csv)
    estimators = sorted({r.estimator for r in table if r.estimator != BOUND_LABEL})
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for ax, (rmse, bound, label) in zip(axes, PANELS):
        first = estimators[0] if estimators else BOUND_LABEL
        x = table.column("axis_value", first)
        ax.semilogy(x, table.column(bound, first), "k--", label="bound")
        for est in estimators:
            y = table.column(rmse, est)
            if np.any(np.isfinite(y)):
                ax.semilogy(table.column("axis_value", est), y, "o-", label=est)
        ax.set_xlabel(args.xlabel)
        ax.set_ylabel(label)
        ax.grid(True, which="both", alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    out = args.out or args.csv.with_suffix(".png")
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
