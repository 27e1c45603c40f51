"""SVG rendering of symmetric bidding curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

import numpy as np  # noqa: E402

SEGMENT_COLORS = {
    "original": "tab:blue",
    "diagonal": "tab:red",
    "shifted": "tab:green",
}
SEGMENT_LABELS = {
    "original": "unconstrained curve",
    "diagonal": "pinned to the type",
    "shifted": "shifted curve",
}


def plot_strategy(ax, xs, values, kinds):
    """Draw a curve coloured by segment kind, plus the dashed diagonal, on ``ax``."""
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    kinds = np.asarray(kinds)
    if xs.size == 0:
        raise ValueError("cannot plot an empty strategy grid")
    ax.plot([0, 1], [0, 1], linestyle="--", color="0.5", linewidth=1, label="contribution = type")
    # split into runs of equal kind; neighbouring runs share their end point
    cuts = np.nonzero(kinds[1:] != kinds[:-1])[0] + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [xs.size]))
    seen = set()
    for a, b in zip(starts, ends):
        kind = str(kinds[a])
        lo = max(a - 1, 0)
        ax.plot(xs[lo:b], values[lo:b], color=SEGMENT_COLORS.get(kind, "k"), linewidth=2,
                label=None if kind in seen else SEGMENT_LABELS.get(kind, kind))
        seen.add(kind)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("type x")
    ax.set_ylabel("contribution")
    ax.set_aspect("equal")
    ax.legend(loc="upper left", frameon=False)
    return ax


def render_curve_svg(xs, values, kinds, path, title: str | None = None) -> Path:
    """Write a standalone SVG of the curve; output is byte-stable for equal inputs."""
    path = Path(path)
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    plot_strategy(ax, xs, values, kinds)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "ugc-equilibria", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
