"""Success-rate figures: median line with a shaded min/max band, one panel per gap kind."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from specloop.bench import STEPS, Curve  # noqa: E402
from specloop.source import GapKind  # noqa: E402

PANEL_TITLES = {GapKind.INVARIANT: "Invariant synthesis", GapKind.CONTRACT: "Subcontract synthesis"}
X_LABELS = {STEPS: "Candidates (steps)", "token_ratio": "Token ratio"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def render_curves(curves: Sequence[Curve], path: Union[str, Path], width: float = 5.0) -> Path:
    """Write one figure for curves sharing an x axis; returns the path written."""
    if not curves:
        raise ValueError("nothing to plot")
    axis = curves[0].x_axis
    kinds = [k for k in GapKind if any(c.kind is k for c in curves)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(kinds), 1, figsize=(width, 2.4 * len(kinds)), squeeze=False,
                                 sharex=True)
        for ax, kind in zip(axes[:, 0], kinds):
            for curve in (c for c in curves if c.kind is kind):
                xs = [float(p.x) for p in curve.points]
                line, = ax.step(xs, curve.medians(), where="post", label=curve.strategy)
                ax.fill_between(xs, [p.min for p in curve.points], [p.max for p in curve.points],
                                step="post", alpha=0.25, color=line.get_color(), linewidth=0)
            ax.set_title(PANEL_TITLES[kind])
            ax.set_ylabel("Success rate")
            ax.set_ylim(0, 1.02)
            ax.legend(loc="lower right")
        axes[-1, 0].set_xlabel(X_LABELS.get(axis, axis))
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, dpi=150, metadata={"Software": None})
        plt.close(fig)
    return path
