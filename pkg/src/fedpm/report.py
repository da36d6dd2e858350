"""Figures for a finished run, rendered off-screen."""
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

# fixed metadata keeps the PNG bytes stable across reruns
_PNG_META = {"Software": None}


def _rounds(metrics):
    return [m.round for m in metrics]


def plot_accuracy(metrics, path, initial_accuracy=None, label="fedpm"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs, ys = _rounds(metrics), [m.accuracy for m in metrics]
    if initial_accuracy is not None:
        xs, ys = [0] + xs, [initial_accuracy] + ys
    ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1.02)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_bitrate(metrics, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = _rounds(metrics)
    ax.plot(xs, [m.bpp for m in metrics], lw=1.2, label="coded uplink")
    ax.plot(xs, [m.entropy_bpp for m in metrics], lw=1.0, ls="--", label="empirical entropy")
    ax.axhline(1.0, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("round")
    ax.set_ylabel("bits per parameter")
    ax.ticklabel_format(axis="y", useOffset=False)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.grid(alpha=0.3)
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def render(result, out_dir):
    """Write accuracy.png and bitrate.png for an ExperimentResult; return the paths."""
    out_dir = os.fspath(out_dir)
    return [
        plot_accuracy(result.metrics, os.path.join(out_dir, "accuracy.png"), result.initial_accuracy,
                      label=result.config.baseline),
        plot_bitrate(result.metrics, os.path.join(out_dir, "bitrate.png")),
    ]
