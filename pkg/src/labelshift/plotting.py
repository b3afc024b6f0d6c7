"""Figures for study reports, written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.4),
    "savefig.dpi": 150,
}

_XLABEL = {
    "n": "sample size n",
    "contamination_rate": "contamination rate",
    "outlier_fraction": "outlier fraction |I|/n",
    "perturbation_eps": "component perturbation",
}


def plot_study(report, out_dir, name: str = "study") -> Path:
    """Median l1 error per estimator with a quantile band and the theoretical envelope."""
    study = report.study
    path = Path(out_dir) / f"{name}.png"
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for est in study.estimators:
            rows = [s for s in report.summary if s["estimator"] == est]
            x = [s["sweep_value"] for s in rows]
            ax.plot(x, [s["median"] for s in rows], marker="o", ms=3, label=est)
            ax.fill_between(x, [s["lower_quantile"] for s in rows], [s["upper_quantile"] for s in rows], alpha=0.2)
        env = [s for s in report.summary if s["estimator"] == study.estimators[0] and s["envelope"] is not None]
        if env:
            ax.plot([s["sweep_value"] for s in env], [s["envelope"] for s in env], "k--", lw=1, label="envelope")
        if study.sweep_variable == "n":
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(_XLABEL[study.sweep_variable])
        ax.set_ylabel("l1 error")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
