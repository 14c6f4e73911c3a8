"""Static figures for a cost profile report (files only, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_add_packet_cdf(report: dict, path: Path) -> Path | None:
    curves = {n: e["add_packet_cdf_ns"] for n, e in report["classes"].items() if e.get("add_packet_cdf_ns")}
    if not curves:
        return None
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, q in sorted(curves.items()):
        probs = [i / (len(q) - 1) for i in range(len(q))] if len(q) > 1 else [1.0]
        ax.step([max(v, 1.0) for v in q], probs, where="post", label=name)
    ax.set_xscale("log")
    ax.set_xlabel("add_packet duration (ns)")
    ax.set_ylabel("CDF")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_series(report: dict, key: str, ylabel: str, path: Path) -> Path | None:
    data = {n: e.get(key) for n, e in report["classes"].items() if e.get(key)}
    if not data:
        return None
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for name, series in sorted(data.items()):
        ax.plot(range(len(series)), series, marker=".", label=name)
    ax.set_xlabel("collection cycle")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_report(report: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    made = [
        plot_add_packet_cdf(report, out / "add_packet_cdf.png"),
        plot_series(report, "state_bytes_per_cycle", "state (bytes)", out / "state_series.png"),
        plot_series(report, "storage_bytes_per_cycle", "storage (bytes)", out / "storage_series.png"),
    ]
    return [p for p in made if p is not None]
