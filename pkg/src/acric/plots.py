"""Figures written next to the CSV outputs (headless Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .adversary import CdfTable, geometric_cdf  # noqa: E402


def plot_cdfs(tables: dict[str, CdfTable], width: int, path) -> None:
    """Empirical attempt CDFs with the analytic geometric law overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    top = 1
    for label, table in tables.items():
        xs = [a for a, _ in table.points]
        ys = [p for _, p in table.points]
        ax.step(xs, ys, where="post", label=label)
        top = max(top, xs[-1])
    k = np.linspace(0, top, 400)
    ax.plot(k, geometric_cdf(k, width), "k--", linewidth=1, label=f"1-(1-2^-{width})^k")
    ax.set_xlabel("attempts")
    ax.set_ylabel("cumulative success probability")
    ax.set_title(f"Brute-force forgery, {width}-bit CRC")
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_storage(rows: list[dict], path) -> None:
    """Grouped bars of per-node storage (bits, log scale) for each strategy."""
    approaches = sorted({r["approach"] for r in rows})
    consumptions = sorted({r["consumption"] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(approaches))
    width = 0.8 / len(consumptions)
    for i, cons in enumerate(consumptions):
        heights = [next(r["formula_bits"] for r in rows
                        if r["approach"] == a and r["consumption"] == cons) for a in approaches]
        ax.bar(x + i * width, heights, width, label=cons)
    ax.set_xticks(x + width * (len(consumptions) - 1) / 2, approaches)
    ax.set_yscale("log")
    ax.set_ylabel("bits per node")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
