"""Example plots for the tables written by `spar`.

Usage: python scripts/plot_tables.py OUTPUT_DIR

Needs pandas and matplotlib. Each figure is saved next to its table as PNG.
"""

import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd


def read(path):
    return pd.read_csv(path, comment="#")


def variables(path):
    for line in path.read_text().splitlines():
        if line.startswith("# variables:"):
            return line.split(":", 1)[1].split()
    return []


def bandwidth(out):
    t = read(out / "bandwidth.csv")
    fig, ax = plt.subplots()
    ax.semilogx(t.kappa, t.nll)
    best = t[t.selected == 1]
    ax.semilogx(best.kappa, best.nll, "o")
    ax.set(xlabel="kappa", ylabel="predictive NLL")
    fig.savefig(out / "bandwidth.png", dpi=120)


def stability(out):
    t = read(out / "stability.csv")
    fig, axes = plt.subplots(2, 1, sharex=True)
    for ax, name in zip(axes, ["xi", "quantile"]):
        ax.fill_between(t.zeta, t[f"{name}_p025"], t[f"{name}_p975"], alpha=0.2)
        ax.fill_between(t.zeta, t[f"{name}_q1"], t[f"{name}_q3"], alpha=0.4)
        ax.plot(t.zeta, t[f"{name}_median"])
        ax.set_ylabel(name)
    axes[-1].set_xlabel("zeta")
    fig.savefig(out / "stability.png", dpi=120)


def qq(out):
    t = read(out / "qq_aggregate.csv")
    fig, ax = plt.subplots()
    ax.plot(t.observed, t.simulated, ".")
    lim = [min(t.observed.min(), t.simulated.min()), max(t.observed.max(), t.simulated.max())]
    ax.plot(lim, lim, "k--", lw=0.8)
    ax.set(xlabel="observed radius", ylabel="simulated radius")
    fig.savefig(out / "qq_aggregate.png", dpi=120)


def tails(out):
    path = out / "marginal_tails.csv"
    t = read(path)
    names = variables(path)
    ci_path = out / "marginal_tails_ci.csv"
    ci = read(ci_path) if ci_path.exists() else None
    for k, g in t.groupby("variable"):
        fig, ax = plt.subplots()
        ax.plot(g.value, g.obs_log10_exceedance, "k.", ms=3, label="observed")
        ax.plot(g.value, g.sim_log10_exceedance, label="simulated")
        if ci is not None:
            c = ci[ci.variable == k]
            ax.fill_between(c.value, c.sim_log10_exceedance_low, c.sim_log10_exceedance_high, alpha=0.3)
        name = names[int(k)] if int(k) < len(names) else str(k)
        ax.set(xlabel=name, ylabel="log10 P(X > x)")
        ax.legend()
        fig.savefig(out / f"tail_{name}.png", dpi=120)


def contour(out):
    t = read(out / "contour.csv")
    fig, ax = plt.subplots()
    sc = ax.scatter(t.X1, t.X2, c=t.angular_density, s=4)
    fig.colorbar(sc, label="angular density")
    ax.set(xlabel="X1", ylabel="X2", aspect="equal")
    fig.savefig(out / "contour.png", dpi=120)


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    plots = {
        "bandwidth.csv": bandwidth,
        "stability.csv": stability,
        "qq_aggregate.csv": qq,
        "marginal_tails.csv": tails,
        "contour.csv": contour,
    }
    for table, plot in plots.items():
        if (out / table).exists():
            plot(out)
            print(f"plotted {table}")


if __name__ == "__main__":
    main()
