"""Dashboard panels rendered to image files next to the JSON report."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.dates as mdates  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402

from .sinkmetrics import DashboardReport  # noqa: E402

PANEL_NAMES = ("top_usernames", "top_passwords", "top_tools", "log_volume", "inference_latency")


def _ranked_bar(ax, rows: Sequence[Tuple[str, int]], title: str) -> None:
    if rows:
        labels = [str(v) for v, _ in rows][::-1]
        counts = [n for _, n in rows][::-1]
        ax.barh(range(len(rows)), counts, color="#4c72b0")
        ax.set_yticks(range(len(rows)))
        ax.set_yticklabels(labels, fontsize=8)
    else:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("count")
    ax.set_title(title)


def render_figures(report: DashboardReport, out_dir: str | Path, prefix: str = "", fmt: str = "png") -> List[Path]:
    """Write one image per dashboard panel; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def save(fig, name: str) -> None:
        path = out / f"{prefix}{name}.{fmt}"
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)

    k = max(len(report.top_usernames), len(report.top_passwords), len(report.top_tools), 1)
    for rows, name, title in (
        (report.top_usernames, "top_usernames", f"Top {k} usernames"),
        (report.top_passwords, "top_passwords", f"Top {k} passwords"),
        (report.top_tools, "top_tools", f"Top {k} predicted tools"),
    ):
        fig, ax = plt.subplots(figsize=(6, max(2.5, 0.25 * len(rows) + 1)))
        _ranked_bar(ax, rows, title)
        save(fig, name)

    fig, ax = plt.subplots(figsize=(8, 3.5))
    if report.volume_buckets:
        starts = [ts for ts, _ in report.volume_buckets]
        width = report.bucket_hours / 24.0
        ax.bar(starts, [n for _, n in report.volume_buckets], width=width, align="edge", color="#55a868")
        ax.xaxis.set_major_formatter(mdates.DateFormatter("%m-%d"))
    ax.set_ylabel("events")
    ax.set_title(f"Log volume per {report.bucket_hours:g} hour bucket")
    save(fig, "log_volume")

    fig, ax = plt.subplots(figsize=(8, 3.5))
    if report.latency_buckets:
        starts = [ts for ts, _ in report.latency_buckets]
        for attr, label in (("mean_ms", "average"), ("p95_ms", "95th"), ("p99_ms", "99th")):
            ax.plot(starts, [getattr(s, attr) for _, s in report.latency_buckets], marker=".", label=label)
        ax.legend(loc="upper right", fontsize=8)
        ax.xaxis.set_major_formatter(mdates.DateFormatter("%m-%d"))
    else:
        ax.text(0.5, 0.5, "no latency samples", ha="center", va="center", transform=ax.transAxes)
    ax.set_ylabel("ms")
    ax.set_title("Inference latency")
    save(fig, "inference_latency")
    return paths
