"""Line plots from experiment CSVs, saved as SVG."""

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_csv", "plot_series"]


def plot_series(series, out_path, xlabel, ylabel, title=None, logy=False):
    """``series`` maps a label to ``(xs, ys)``; writes a deterministic SVG."""
    with plt.rc_context({"svg.hashsalt": "equiwarp", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        for label, (xs, ys) in series.items():
            ax.plot(xs, ys, marker="o", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if logy:
            ax.set_yscale("log")
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)


def plot_csv(csv_path, out_path, x, y, group=None, title=None, logy=False):
    """Plot column ``y`` against ``x``, one line per distinct ``group`` value."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{csv_path} has no rows")
    for col in [x, y] + ([group] if group else []):
        if col not in rows[0]:
            raise KeyError(f"column {col!r} not in {csv_path}")
    series = defaultdict(lambda: ([], []))
    for r in rows:
        label = f"{group}={r[group]}" if group else y
        series[label][0].append(float(r[x]))
        series[label][1].append(float(r[y]))
    plot_series(dict(series), out_path, x, y, title, logy)
