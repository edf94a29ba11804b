"""CSV tables and matplotlib figures written next to experiment outputs."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport  # noqa: E402

PathLike = Union[str, Path]


def write_loss_csv(losses: Sequence[float], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def plot_loss(losses: Sequence[float], path: PathLike, window: int = 10) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(len(losses)), losses, lw=0.8, alpha=0.5, label="batch")
    if len(losses) >= window:
        run = [sum(losses[i - window:i]) / window for i in range(window, len(losses) + 1)]
        ax.plot(range(window - 1, len(losses)), run, lw=1.5, label=f"mean of {window}")
    ax.set_xlabel("step")
    ax.set_ylabel("CT loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_per_label_csv(report: EvalReport, path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "support", "tp", "fp", "fn", "precision", "recall", "f1"])
        for lab, v in sorted(report.per_label.items()):
            w.writerow([lab, v["support"], v["tp"], v["fp"], v["fn"],
                        f"{v['precision']:.6f}", f"{v['recall']:.6f}", f"{v['f1']:.6f}"])
        w.writerow(["micro", report.n_examples, report.counts["tp"], report.counts["fp"],
                    report.counts["fn"], f"{report.micro_precision:.6f}", f"{report.micro_recall:.6f}",
                    f"{report.micro_f1:.6f}"])


def plot_per_label_f1(report: EvalReport, path: PathLike) -> None:
    labels = sorted(report.per_label)
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(labels) + 1.5), 3.2))
    ax.bar(range(len(labels)), [report.per_label[lab]["f1"] for lab in labels], color="0.45")
    ax.axhline(report.micro_f1, color="C3", lw=1, ls="--", label=f"micro F1 {report.micro_f1:.3f}")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_ksweep_csv(reports: Sequence[EvalReport], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "micro_precision", "micro_recall", "micro_f1", "demo_label_purity", "fingerprint"])
        for r in sorted(reports, key=lambda r: r.k):
            w.writerow([r.k, f"{r.micro_precision:.6f}", f"{r.micro_recall:.6f}", f"{r.micro_f1:.6f}",
                        f"{r.extra.get('demo_label_purity', 0.0):.6f}", r.config_fingerprint])


def plot_ksweep(reports: Sequence[EvalReport], path: PathLike) -> None:
    rs = sorted(reports, key=lambda r: r.k)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ks = [r.k for r in rs]
    ax.plot(ks, [r.micro_f1 for r in rs], marker="o", label="micro F1")
    ax.plot(ks, [r.extra.get("demo_label_purity", 0.0) for r in rs], marker="s", label="demo purity")
    ax.set_xlabel("k")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_experiment_figures(report: EvalReport, out_dir: PathLike) -> list[Path]:
    out = Path(out_dir)
    paths = [out / "per_label.csv", out / "per_label_f1.png"]
    write_per_label_csv(report, paths[0])
    plot_per_label_f1(report, paths[1])
    return paths
