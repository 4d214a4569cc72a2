"""SVG charts rendered from the artifact CSVs.

matplotlib is imported lazily so the rest of the package has no plotting
dependency; every chart is derived from the CSV files alone, never from
in-memory state, so plots can be regenerated long after a run.
"""

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _read(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def plot_bands(csv_path, out_path):
    plt = _plt()
    table = _read(csv_path)
    names = [c[: -len("_mean")] for c in table.dtype.names if c.endswith("_mean")]
    fig, ax = plt.subplots(figsize=(7, 4))
    for name in names:
        line = ax.plot(table["x"], table[f"{name}_mean"], label=name)[0]
        ax.fill_between(
            table["x"], table[f"{name}_lo"], table[f"{name}_hi"],
            alpha=0.2, color=line.get_color(),
        )
    ax.set_xlabel("x")
    ax.set_ylabel("v(x)")
    ax.legend()
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)


def plot_hist(csv_path, out_path):
    plt = _plt()
    table = _read(csv_path)
    names = [c[len("count_"):] for c in table.dtype.names if c.startswith("count_")]
    centers = 0.5 * (table["bin_lo"] + table["bin_hi"])
    width = (table["bin_hi"] - table["bin_lo"]).mean()
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, name in enumerate(names):
        offset = (k - (len(names) - 1) / 2) * width / max(len(names), 1)
        ax.bar(centers + offset, table[f"count_{name}"],
               width=width / max(len(names), 1), label=name, alpha=0.8)
    ax.set_xlabel("value")
    ax.set_ylabel("count")
    ax.legend()
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)


def plot_scatter(csv_path, out_path):
    plt = _plt()
    table = _read(csv_path)
    names = [c[: -len("_v_x0")] for c in table.dtype.names if c.endswith("_v_x0")]
    fig, ax = plt.subplots(figsize=(5, 5))
    for name in names:
        ax.scatter(table[f"{name}_v_x0"], table[f"{name}_v_x1"], s=8, label=name,
                   alpha=0.6)
    ax.set_xlabel("v(x0)")
    ax.set_ylabel("v(x1)")
    ax.legend()
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)


def plot_sweep(csv_path, out_path):
    plt = _plt()
    table = np.atleast_1d(_read(csv_path))
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in sorted(set(table["R"])):
        rows = table[table["R"] == r]
        order = np.argsort(rows["d"])
        ax.plot(rows["d"][order], rows["energy_distance"][order],
                marker="o", label=f"R={r:g}")
    ax.set_xlabel("generator dimension fraction d")
    ax.set_ylabel("energy distance")
    ax.set_yscale("log")
    ax.legend()
    fig.savefig(out_path, format="svg", bbox_inches="tight")
    plt.close(fig)


def render_dir(path):
    """Render every known CSV in `path`; returns the SVG paths written."""
    path = Path(path)
    made = []
    for csv_path in sorted(path.glob("*.csv")):
        out = csv_path.with_suffix(".svg")
        name = csv_path.name
        if name == "bands.csv":
            plot_bands(csv_path, out)
        elif name.startswith("hist_"):
            plot_hist(csv_path, out)
        elif name.startswith("scatter_"):
            plot_scatter(csv_path, out)
        elif name == "sweep.csv":
            plot_sweep(csv_path, out)
        else:
            continue
        made.append(out)
    return made
