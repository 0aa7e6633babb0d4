"""SVG charts for benchmark reports and loss trajectories (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import STD_SEED, SUMMARY_SEED, BenchmarkReport  # noqa: E402
from .errors import TensorIOError  # noqa: E402

# fixed metadata keeps SVG output byte-stable across runs
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "mlpfusion"


def _save(fig, out):
    out = Path(out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata=_SVG_META, bbox_inches="tight")
    except OSError as exc:
        raise TensorIOError(f"cannot write figure: {exc}", path=str(out)) from exc
    finally:
        plt.close(fig)
    return out


def error_bars(report: BenchmarkReport, out, columns=("output_error", "ntk_error_sgd", "ntk_error_adam")):
    """One panel per metric: mean over seeds with a one-std error bar, log scale."""
    methods = report.header["methods"]
    stats = {(r["method"], r["seed"]): r for r in report.summary}
    fig, axes = plt.subplots(1, len(columns), figsize=(4.2 * len(columns), 3.4), squeeze=False)
    x = np.arange(len(methods))
    for ax, col in zip(axes[0], columns):
        means = np.array([stats[(m, SUMMARY_SEED)][col] for m in methods])
        stds = np.array([stats[(m, STD_SEED)][col] for m in methods])
        ax.bar(x, means, yerr=stds, capsize=3, color="0.55", edgecolor="0.2", linewidth=0.6)
        ax.set_xticks(x, methods, rotation=30, ha="right")
        ax.set_title(col.replace("_", " "), fontsize=10)
        if np.all(means[np.isfinite(means)] > 0):
            ax.set_yscale("log")
        ax.spines[["top", "right"]].set_visible(False)
    fig.suptitle(f"error over {len(report.header['seeds'])} seeds", fontsize=10)
    return _save(fig, out)


def loss_curves(trajectories: dict, out, title="training loss"):
    """``trajectories`` maps a label to a sequence of losses (or a LossTrajectory)."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for label in sorted(trajectories):
        values = getattr(trajectories[label], "values", trajectories[label])
        ax.plot(np.arange(len(values)), values, label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8)
    ax.spines[["top", "right"]].set_visible(False)
    return _save(fig, out)
