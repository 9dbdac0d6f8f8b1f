"""Report rendering: aligned text tables, CSV/JSON files, and matplotlib
figures written next to them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalkit import AblationResult, EvalResult


def eval_table_text(results: Sequence[EvalResult]) -> str:
    cats = sorted({c for r in results for c in r.per_category})
    header = ["mode"] + cats + ["mean"]
    rows = []
    for r in results:
        rows.append([r.mode] + [f"{r.per_category.get(c, float('nan')):.3f}"
                                for c in cats] + [f"{r.mean:.3f}"])
    widths = [max(len(h), *(len(row[i]) for row in rows))
              for i, h in enumerate(header)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(header)] + [fmt(r) for r in rows])


def write_eval_report(out_dir, results: Sequence[EvalResult],
                      stem: str = "eval") -> dict[str, Path]:
    """eval.json + eval.csv + eval.txt + eval.png under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    paths["json"] = out / f"{stem}.json"
    with open(paths["json"], "w") as fh:
        json.dump([r.to_dict() for r in results], fh, indent=1, sort_keys=True)

    cats = sorted({c for r in results for c in r.per_category})
    paths["csv"] = out / f"{stem}.csv"
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode"] + cats + ["mean"])
        for r in results:
            writer.writerow([r.mode] + [f"{r.per_category.get(c, float('nan')):.6f}"
                                        for c in cats] + [f"{r.mean:.6f}"])

    paths["txt"] = out / f"{stem}.txt"
    paths["txt"].write_text(eval_table_text(results) + "\n")

    paths["png"] = out / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(cats), 3.2))
    x = np.arange(len(cats))
    width = 0.8 / max(1, len(results))
    for i, r in enumerate(results):
        vals = [r.per_category.get(c, np.nan) for c in cats]
        ax.bar(x + i * width, vals, width, label=f"{r.mode} (mean {r.mean:.3f})")
    ax.set_xticks(x + width * (len(results) - 1) / 2)
    ax.set_xticklabels(cats, rotation=20, ha="right")
    ax.set_ylabel("voxel IoU")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=110)
    plt.close(fig)
    return paths


def ablation_table_text(result: AblationResult) -> str:
    lines = [f"{'row':10s}  {'RPS':3s}  {'CD':3s}  {'GT mean':8s}  {'Pred mean':9s}"]
    for row in result.rows:
        lines.append(f"{row.name:10s}  {'x' if row.rps_on else ' ':3s}  "
                     f"{'x' if row.cd_on else ' ':3s}  {row.gt.mean:8.3f}  "
                     f"{row.pred.mean:9.3f}")
    return "\n".join(lines)


def write_ablation_report(out_dir, result: AblationResult,
                          stem: str = "ablation") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["json"] = out / f"{stem}.json"
    with open(paths["json"], "w") as fh:
        json.dump(result.to_dict(), fh, indent=1, sort_keys=True)

    paths["csv"] = out / f"{stem}.csv"
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "rps", "cd", "gt_mean", "pred_mean"])
        for row in result.rows:
            writer.writerow([row.name, int(row.rps_on), int(row.cd_on),
                             f"{row.gt.mean:.6f}", f"{row.pred.mean:.6f}"])

    paths["txt"] = out / f"{stem}.txt"
    paths["txt"].write_text(ablation_table_text(result) + "\n")

    paths["png"] = out / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    names = [r.name for r in result.rows]
    x = np.arange(len(names))
    ax.bar(x - 0.18, result.means("gt"), 0.36, label="GT pose")
    ax.bar(x + 0.18, result.means("pred"), 0.36, label="pred pose")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("mean voxel IoU")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(paths["png"], dpi=110)
    plt.close(fig)
    return paths


def write_training_curves(log_path, out_png) -> Optional[Path]:
    """Loss curves from the line-delimited JSON training log."""
    entries = []
    with open(log_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    if not entries:
        return None
    steps = [e["step"] for e in entries]
    fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.2))
    for key in ("total", "sp", "v", "r"):
        axes[0].plot(steps, [e[key] for e in entries], label=key, linewidth=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("generator loss")
    axes[0].legend(fontsize=7)
    if any(e.get("d_loss") is not None for e in entries):
        axes[1].plot(steps, [e.get("d_loss") or np.nan for e in entries],
                     label="critic", linewidth=0.8, color="tab:red")
        axes[1].plot(steps, [e["sd"] for e in entries], label="adv (G)",
                     linewidth=0.8, color="tab:green")
        axes[1].legend(fontsize=7)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("adversarial loss")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)


def write_sigma_sweep(mesh, pose, resolution: int, sigmas: Sequence[float],
                      out_dir, stem: str = "sigma_sweep") -> dict[str, Path]:
    """Contact sheet of soft renders across sigmas, the hard reference, and
    a CSV of mean |soft - hard| per sigma."""
    from .rasterizer import hard_rasterize, soft_rasterize

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hard = hard_rasterize(mesh, pose, resolution).data
    softs = [soft_rasterize(mesh, pose, resolution, s).data for s in sigmas]
    diffs = [float(np.mean(np.abs(s - hard))) for s in softs]

    paths = {}
    paths["csv"] = out / f"{stem}.csv"
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "mean_abs_diff_vs_hard"])
        for s, d in zip(sigmas, diffs):
            writer.writerow([f"{s:g}", f"{d:.6f}"])

    n = len(sigmas) + 1
    fig, axes = plt.subplots(1, n, figsize=(1.9 * n, 2.3))
    for ax, img, title in zip(
            axes, softs + [hard],
            [f"sigma={s:g}\n|diff|={d:.4f}" for s, d in zip(sigmas, diffs)] + ["hard"]):
        ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        ax.set_title(title, fontsize=7)
        ax.axis("off")
    fig.tight_layout()
    paths["png"] = out / f"{stem}.png"
    fig.savefig(paths["png"], dpi=110)
    plt.close(fig)
    return paths
