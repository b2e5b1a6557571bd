"""Figure rendering for experiment results.

Figures are written straight to files (headless backend); each
experiment kind gets one plot so a simulation run leaves a small visual
summary next to its tables.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidInputError


def _plot_type1(result, ax):
    alphas = sorted({row["alpha"] for row in result.rows})
    for method in dict.fromkeys(row["method"] for row in result.rows):
        pts = {row["alpha"]: row["rate"] for row in result.rows if row["method"] == method}
        ax.plot(alphas, [pts[a] for a in alphas], marker="o", label=method)
    ax.plot(alphas, alphas, linestyle="--", color="grey", label="nominal")
    ax.plot(alphas, [2 * a for a in alphas], linestyle=":", color="grey", label="2x nominal")
    ax.set_xlabel("nominal level")
    ax.set_ylabel("rejection rate")
    ax.set_title(f"null rejection, {result.design.name} design, {result.noise.name} noise")
    ax.legend(fontsize="small")


def _plot_power(result, ax):
    targets = sorted({row["target"] for row in result.rows})
    for method in dict.fromkeys(row["method"] for row in result.rows):
        pts = {row["target"]: row["power"] for row in result.rows if row["method"] == method}
        ax.plot(targets, [pts[t] for t in targets], marker="o", label=method)
    ax.plot(targets, targets, linestyle="--", color="grey", label="F-test target")
    ax.set_xlabel("calibrated F-test power")
    ax.set_ylabel("power")
    ax.set_ylim(0, 1)
    ax.set_title(f"power, {result.design.name} design, {result.noise.name} noise")
    ax.legend(fontsize="small")


def _plot_coverage(result, ax):
    names = [row["method"] for row in result.rows]
    rates = [row["coverage"] for row in result.rows]
    bars = ax.bar(names, rates, color=["#4477aa", "#ccbb44"])
    nominal = 1.0 - result.meta.get("alpha", 0.05)
    ax.axhline(nominal, linestyle="--", color="grey", label=f"nominal {nominal:.2f}")
    for bar, row in zip(bars, result.rows):
        ax.annotate(f"len {row['median_length']:.3g}",
                    (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize="small")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("coverage")
    ax.set_title(f"interval coverage, {result.design.name} design, {result.noise.name} noise")
    ax.legend(fontsize="small")


_PLOTTERS = {"type1": _plot_type1, "power": _plot_power, "ci_coverage": _plot_coverage}


def render_figures(results, outdir) -> list:
    """Write one PNG per result into ``outdir``; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for i, result in enumerate(results):
        plotter = _PLOTTERS.get(result.kind)
        if plotter is None:
            raise InvalidInputError(f"no figure defined for result kind {result.kind!r}")
        fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
        plotter(result, ax)
        fig.tight_layout()
        path = os.path.join(outdir, f"{result.kind}_{i}.png")
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths
