"""Tabular and plotted views of a cost profile report."""

from __future__ import annotations

import csv
import io
from pathlib import Path

TABLE_COLUMNS = [
    "class", "services", "add_packet_count", "add_packet_median_ns", "add_packet_mean_ns",
    "add_packet_p99_ns", "state_peak_bytes", "state_mean_bytes", "storage_total_bytes", "cycles",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def table_rows(report: dict) -> list[list[str]]:
    rows = []
    for name, entry in sorted(report["classes"].items()):
        timing = entry.get("add_packet_ns") or {}
        state = entry.get("state_bytes_per_cycle") or []
        rows.append([
            name,
            ",".join(entry.get("services", [])),
            _fmt(timing.get("count")),
            _fmt(timing.get("median")),
            _fmt(timing.get("mean")),
            _fmt(timing.get("p99")),
            _fmt(max(state) if state else 0),
            _fmt(sum(state) / len(state) if state else 0.0),
            _fmt(entry.get("storage_bytes_total")),
            _fmt(len(state)),
        ])
    return rows


def render_table(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    w.writerows(table_rows(report))
    return buf.getvalue()


def render_series(report: dict) -> str:
    """Long-format TSV of the per-cycle state and storage series."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["class", "cycle", "state_bytes", "state_bytes_after_collect", "storage_bytes"])
    for name, entry in sorted(report["classes"].items()):
        state = entry.get("state_bytes_per_cycle", [])
        after = entry.get("state_bytes_after_collect", [])
        storage = entry.get("storage_bytes_per_cycle", [])
        for i in range(max(len(state), len(storage))):
            w.writerow([name, i,
                        state[i] if i < len(state) else "",
                        after[i] if i < len(after) else "",
                        storage[i] if i < len(storage) else ""])
    return buf.getvalue()


def write_report_files(report: dict, out_dir, fmt: str = "table") -> dict[str, list[str]]:
    """Write the table (always) and, for ``plots``, the series and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"tables": [], "figures": []}
    table = out / "profile_table.tsv"
    table.write_text(render_table(report))
    written["tables"].append(str(table))
    if fmt == "plots":
        from .plotting import plot_report
        series = out / "profile_series.tsv"
        series.write_text(render_series(report))
        written["tables"].append(str(series))
        written["figures"] = [str(p) for p in plot_report(report, out)]
    return written
