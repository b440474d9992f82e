"""Evaluation report output: JSON metrics, the mIoU-NoC curve as CSV, and a
rendered figure next to them.
"""
from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .interact import MetricsReport, SessionRecord


def write_report(report: MetricsReport, records: list[SessionRecord],
                 json_path: str, curve_csv_path: str | None = None,
                 figure_path: str | None = None,
                 sessions_path: str | None = None) -> None:
    with open(json_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
    if curve_csv_path:
        with open(curve_csv_path, "w") as fh:
            fh.write(report.curve_csv())
    if figure_path:
        render_curve(report, figure_path)
    if sessions_path:
        with open(sessions_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_json_dict()) + "\n")


def render_curve(report: MetricsReport, path: str) -> None:
    ks = list(range(1, len(report.iou_at_k) + 1))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ks, report.iou_at_k, marker="o", ms=3)
    for t, noc in report.noc.items():
        ax.axhline(t, ls="--", lw=0.8, color="gray")
        ax.annotate(f"NoC@{t:.2f}={noc:.2f}", xy=(ks[-1], t),
                    ha="right", va="bottom", fontsize=8)
    ax.set_xlabel("interactions")
    ax.set_ylabel("mean IoU")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_loss_history(history: list[dict], path: str) -> None:
    if not history:
        return
    fig, ax = plt.subplots(figsize=(5, 3.2))
    steps = list(range(1, len(history) + 1))
    for key in ("total", "nfl", "dice", "p2cl"):
        ax.plot(steps, [h[key] for h in history], lw=0.9, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
