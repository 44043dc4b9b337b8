"""Evaluation/training report files: JSON, PR-curve CSV, rendered figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsReport  # noqa: E402


def save_report(report: MetricsReport, json_path) -> dict:
    """Write <stem>.json plus <stem>_pr.csv and <stem>_pr.png; returns the
    paths actually written."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report.to_json())
    csv_path = json_path.with_name(json_path.stem + "_pr.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for thr, p, r in report.pr_curve:
            w.writerow([f"{thr:.8f}", f"{p:.8f}", f"{r:.8f}"])
    png_path = json_path.with_name(json_path.stem + "_pr.png")
    render_pr_figure(report, png_path)
    return {"json": str(json_path), "csv": str(csv_path), "figure": str(png_path)}


def render_pr_figure(report: MetricsReport, png_path):
    thr = [t for t, _, _ in report.pr_curve]
    prec = [p for _, p, _ in report.pr_curve]
    rec = [r for _, _, r in report.pr_curve]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(thr, prec, lw=1.5)
    axes[0].set_xlabel("threshold")
    axes[0].set_ylabel("precision")
    axes[0].set_ylim(0, 1.02)
    axes[1].plot(thr, rec, lw=1.5, color="tab:orange")
    axes[1].set_xlabel("threshold")
    axes[1].set_ylabel("recall")
    axes[1].set_ylim(0, 1.02)
    fig.suptitle(f"S={report.s_alpha:.4f}  E={report.e_phi:.4f}  "
                 f"Fw={report.f_beta_w:.4f}  MAE={report.mae:.4f}  (n={report.n_images})")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def render_loss_figure(runlog_path, png_path):
    """Per-step loss curves for both phases from a runlog.jsonl."""
    phases = {"A": [], "B": []}
    with open(runlog_path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "step":
                phases[rec["phase"]].append(rec["loss"])
    fig, ax = plt.subplots(figsize=(7, 3.2))
    offset = 0
    for phase, color in (("A", "tab:gray"), ("B", "tab:blue")):
        ys = phases[phase]
        if ys:
            ax.plot(range(offset, offset + len(ys)), ys, lw=0.9, color=color,
                    label=f"phase {phase}")
            offset += len(ys)
    ax.set_xlabel("step")
    ax.set_ylabel("BCE loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
