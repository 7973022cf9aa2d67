"""Matplotlib rendering for the report paths (eval tables, bench CDFs).

Everything renders headless (Agg) straight to files next to the delimited
output. Helpers return the written path so CLI code can log it.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import BlendshapeStream
from .evaluate import EvalReport

plt.rcParams.update(
    {
        "figure.figsize": (8.0, 4.5),
        "figure.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 9,
    }
)


def save_channel_overlay(
    a: BlendshapeStream,
    b: BlendshapeStream,
    channel: str,
    path: str,
    labels: tuple[str, str] = ("stream A", "stream B"),
) -> str:
    """Overlay one channel of both streams against time."""
    t = a.timestamps() / 1000.0
    fig, ax = plt.subplots()
    ax.plot(t, a.channel(channel), label=labels[0], lw=1.0)
    ax.plot(t, b.channel(channel), label=labels[1], lw=1.0, alpha=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(f"{channel} weight")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_report_summary(report: EvalReport, path: str) -> str:
    """Grouped bars: per-channel F1 (both streams) and cross-correlation."""
    rows = [r for r in report.rows]
    names = [r.blendshape for r in rows]
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(max(8.0, 0.45 * len(names)), 7.0))

    def bars(ax, offset, values, width, label):
        vals = [v if v is not None else 0.0 for v in values]
        ax.bar(x + offset, vals, width, label=label)

    bars(ax1, -0.2, [r.a_f1 for r in rows], 0.4, "stream A F1")
    bars(ax1, 0.2, [r.b_f1 for r in rows], 0.4, "stream B F1")
    ax1.set_ylabel("event F1")
    ax1.set_xticks(x)
    ax1.set_xticklabels(names, rotation=60, ha="right")
    ax1.set_ylim(0, 1.05)
    ax1.legend()

    bars(ax2, -0.2, [r.pearson for r in rows], 0.4, "Pearson")
    bars(ax2, 0.2, [r.xi for r in rows], 0.4, "xi")
    ax2.set_ylabel("cross-correlation")
    ax2.set_xticks(x)
    ax2.set_xticklabels(names, rotation=60, ha="right")
    ax2.set_ylim(-0.05, 1.05)
    ax2.legend()

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_latency_cdf(latencies_ms: np.ndarray, path: str) -> str:
    """Empirical CDF of per-frame latency, with the p50/p95 markers."""
    lat = np.sort(np.asarray(latencies_ms, dtype=float))
    cdf = np.arange(1, lat.size + 1) / lat.size
    p50 = float(np.percentile(lat, 50))
    p95 = float(np.percentile(lat, 95))
    fig, ax = plt.subplots()
    ax.plot(lat, cdf, lw=1.2)
    for q, v, color in ((0.50, p50, "tab:green"), (0.95, p95, "tab:red")):
        ax.axvline(v, color=color, ls="--", lw=0.9)
        ax.annotate(f"p{int(q * 100)} = {v:.3f} ms", xy=(v, q), xytext=(5, -12),
                    textcoords="offset points", color=color)
    ax.set_xlabel("per-frame latency [ms]")
    ax.set_ylabel("cumulative fraction")
    ax.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
