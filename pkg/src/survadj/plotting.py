"""Figures written next to the CSV outputs.

Everything here draws on a bare ``matplotlib.figure.Figure`` with the Agg
canvas, so nothing touches pyplot state or needs a display.
"""

from pathlib import Path
from typing import Dict, Iterable, Mapping

import numpy as np
from matplotlib import rcParams
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .dataset import StepCurve

golden = (np.sqrt(5.0) - 1.0) / 2.0
width = 6.4

style = {
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "font.size": 8,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}

group_colors = ("#1f77b4", "#d62728")


def _figure(nrows=1, ncols=1, height=None):
    fig = Figure(figsize=(width, height or width * golden))
    FigureCanvasAgg(fig)
    axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def _save(fig, path) -> Path:
    path = Path(path)
    with rcParams_context():
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
    return path


class rcParams_context:
    """Apply :data:`style` for the duration of a drawing call."""

    def __enter__(self):
        self._old = {k: rcParams[k] for k in style}
        rcParams.update(style)

    def __exit__(self, *exc):
        rcParams.update(self._old)


def _step(ax, curve: StepCurve, horizon, **kw):
    t = np.concatenate(([0.0], curve.times))
    v = curve.all_values
    if horizon is not None and horizon > t[-1]:
        t, v = np.append(t, horizon), np.append(v, v[-1])
    ax.step(t, v, where="post", **kw)


def plot_adjusted_curves(results: Mapping, path, horizon=None) -> Path:
    """One panel per method with both group curves.

    ``results`` maps a method name to an object with ``curve(z)``.
    """
    with rcParams_context():
        names = list(results)
        ncols = min(3, len(names))
        nrows = int(np.ceil(len(names) / ncols))
        fig, axes = _figure(nrows, ncols, height=2.2 * nrows)
        for ax, name in zip(axes.flat, names):
            res = results[name]
            for z in (0, 1):
                _step(ax, res.curve(z), horizon, color=group_colors[z], label=f"Z={z}")
            ax.axhline(0.0, color="0.7", lw=0.5)
            ax.axhline(1.0, color="0.7", lw=0.5)
            ax.set_title(str(getattr(name, "value", name)))
            ax.set_xlabel("time")
            ax.set_ylabel("survival")
        for ax in list(axes.flat)[len(names):]:
            ax.set_visible(False)
        axes.flat[0].legend(frameon=False)
        return _save(fig, path)


def plot_truth(curves: Iterable[StepCurve], path) -> Path:
    with rcParams_context():
        fig, axes = _figure()
        ax = axes[0, 0]
        for z, c in enumerate(curves):
            _step(ax, c, None, color=group_colors[z], label=f"Z={z}")
        ax.set_xlabel("time")
        ax.set_ylabel("true survival")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_bias(records, path) -> Path:
    """Box plots of the per-replication integrated bias, one panel per
    (scenario, n), one box per method and group."""
    cells: Dict[tuple, Dict[tuple, list]] = {}
    for r in records:
        if r.failed:
            continue
        cells.setdefault((r.scenario, r.n), {}).setdefault((r.method, r.group), []).append(
            r.delta_bias)
    with rcParams_context():
        keys = sorted(cells)
        fig, axes = _figure(len(keys), 1, height=max(2.5, 2.5 * len(keys)))
        for ax, key in zip(axes[:, 0], keys):
            groups = cells[key]
            labels = sorted(groups, key=lambda mg: (_order(mg[0]), mg[1]))
            box = ax.boxplot([groups[k] for k in labels], patch_artist=True, widths=0.6,
                             flierprops={"markersize": 2})
            for patch, (_, z) in zip(box["boxes"], labels):
                patch.set_facecolor(group_colors[z])
                patch.set_alpha(0.5)
            ax.axhline(0.0, color="0.3", lw=0.6)
            ax.set_xticks(np.arange(1, len(labels) + 1))
            ax.set_xticklabels([f"{m} z={z}" for m, z in labels], rotation=60, ha="right")
            ax.set_ylabel("integrated bias")
            ax.set_title(f"{key[0]}, n={key[1]}")
        return _save(fig, path)


def plot_oob_profile(profiles: Mapping[tuple, np.ndarray], path) -> Path:
    """Percentage of replications out of bounds per slice of [0, tau]."""
    with rcParams_context():
        fig, axes = _figure()
        ax = axes[0, 0]
        drawn = 0
        for (method, scen, n, z), prof in profiles.items():
            if not np.any(prof > 0):
                continue
            mid = (np.arange(len(prof)) + 0.5) / len(prof)
            ax.plot(mid, prof, marker="o", ms=2,
                    ls="-" if z == 0 else "--", label=f"{method} {scen} n={n} z={z}")
            drawn += 1
        ax.set_xlabel("fraction of [0, tau]")
        ax.set_ylabel("% of time out of bounds")
        if drawn:
            ax.legend(frameon=False, ncol=2)
        return _save(fig, path)


def _order(method):
    from .estimators import MethodId
    names = [m.value for m in MethodId]
    return names.index(method) if method in names else len(names)
