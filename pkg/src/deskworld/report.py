"""Report rendering: CSV tables plus matplotlib figures written to files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

METRIC_FIELDS = ("step", "split", "loss", "psnr_db", "ssim", "lr", "wall_ms")


def metrics_to_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({f: getattr(row, f) for f in METRIC_FIELDS})
    return path


def plot_loss_curve(rows, path) -> Path:
    path = Path(path)
    steps = [r.step for r in rows if r.split == "train"]
    losses = [r.loss for r in rows if r.split == "train"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_rollout_metrics(rows, path) -> Path:
    path = Path(path)
    val = [r for r in rows if r.split == "val"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].plot([r.step for r in val], [r.psnr_db for r in val], marker="o")
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].plot([r.step for r in val], [r.ssim for r in val], marker="o", color="tab:orange")
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("SSIM")
    fig.suptitle("single-frame rollout metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_training_report(log, out_dir) -> dict:
    """CSV + figures for a finished training run; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": metrics_to_csv(log.rows, out / "metrics.csv"),
             "loss_curve": plot_loss_curve(log.rows, out / "loss_curve.png")}
    if any(r.split == "val" for r in log.rows):
        paths["rollout_metrics"] = plot_rollout_metrics(log.rows, out / "rollout_metrics.png")
    return paths


def write_eval_report(results: dict, out_dir) -> dict:
    """Tabulate {label: {"psnr_db": x, "ssim": y}} as CSV plus a bar figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "eval.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "psnr_db", "ssim"])
        for label in sorted(results):
            writer.writerow([label, results[label]["psnr_db"], results[label]["ssim"]])
    labels = sorted(results)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].bar(labels, [results[k]["psnr_db"] for k in labels])
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].bar(labels, [results[k]["ssim"] for k in labels], color="tab:orange")
    axes[1].set_ylabel("SSIM")
    for ax in axes:
        ax.tick_params(axis="x", rotation=20)
    fig.suptitle("single-frame rollout evaluation")
    fig.tight_layout()
    fig_path = out / "eval.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "figure": fig_path}


def write_bench_report(results: list, out_dir) -> dict:
    """Read-throughput results ({frames_per_record, frames_per_sec, ...}) to CSV + figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bench.csv"
    fields = ["frames_per_record", "frames", "seconds", "frames_per_sec"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in results:
            writer.writerow({k: row[k] for k in fields})
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [str(r["frames_per_record"]) for r in results]
    ax.bar(xs, [r["frames_per_sec"] for r in results])
    ax.set_xlabel("frames per record")
    ax.set_ylabel("frames / s (read + decode)")
    ax.set_title("record-store read throughput")
    fig.tight_layout()
    fig_path = out / "bench.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "figure": fig_path}


def save_rollout_strip(frames: np.ndarray, path, n_conditioning: int = 4) -> Path:
    """Render a (T, H, W, C) rollout as one row of tiles; conditioning outlined."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = frames.shape[0]
    fig, axes = plt.subplots(1, t, figsize=(1.2 * t, 1.6))
    if t == 1:
        axes = [axes]
    for i, ax in enumerate(axes):
        ax.imshow(frames[i])
        ax.set_xticks([])
        ax.set_yticks([])
        label = f"c{i}" if i < n_conditioning else f"g{i - n_conditioning}"
        ax.set_title(label, fontsize=7)
        if i < n_conditioning:
            for spine in ax.spines.values():
                spine.set_edgecolor("tab:blue")
                spine.set_linewidth(2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
