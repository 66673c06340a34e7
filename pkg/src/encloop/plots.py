"""Figure rendering for the report paths (written next to the CSVs)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import quadtank


def tracking_figure(t, refs, y_enc, y_plain, path, sensor_gain=quadtank.SENSOR_GAIN,
                    level_offsets=(12.4, 12.7)):
    """Measured water levels under the encrypted and unencrypted loops."""
    t = np.asarray(t)
    channels = y_enc.shape[1]
    fig, axes = plt.subplots(channels, 1, sharex=True, figsize=(7, 2.6 * channels))
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        off = level_offsets[i] if i < len(level_offsets) else 0.0
        ax.plot(t, refs[:, i] / sensor_gain + off, "k--", lw=1, label="reference")
        if y_plain is not None:
            ax.plot(t, y_plain[:, i] / sensor_gain + off, "b", lw=1.2, label="unencrypted")
        ax.plot(t, y_enc[:, i] / sensor_gain + off, "r", lw=0.8, label="encrypted")
        ax.set_ylabel(f"level {i + 1} [cm]")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="lower right", fontsize=8)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def error_figure(t, err_cm, path):
    """2-norm of the level error between the two loops."""
    fig, ax = plt.subplots(figsize=(7, 2.8))
    ax.plot(np.asarray(t), np.asarray(err_cm), lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("output error [cm]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def bench_figure(table, path):
    """Average per-primitive times on a log scale."""
    names = list(table)
    avgs = [table[k]["avg_ms"] for k in names]
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.bar(names, avgs, color="#4878cf")
    ax.set_yscale("log")
    ax.set_ylabel("avg time [ms]")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
