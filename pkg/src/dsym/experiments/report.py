"""Static report: plots plus an index page assembled from run directories.

Works purely from archived artifacts (manifest, metrics.csv, pr_curve.csv,
filter_audit.csv, config.yaml); nothing is retrained or re-evaluated, so a
report over finished runs is cheap and reproducible. Runs with missing
artifacts are listed as incomplete instead of failing the report.
"""

from __future__ import annotations

import html
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..config import load_config, resolve_filter_config
from ..data.defects import CLASS_NAMES
from ..filtering import FilterConfig, keep_sample
from .runs import read_audit_csv, read_manifest, read_metrics_csv, read_pr_csv


def plot_per_class_ap(per_class_ap: Dict, path, title: str = "AP by class") -> Path:
    """Bar chart ordered by class id; undefined APs plot as zero-height."""
    ids = sorted(int(k) for k in per_class_ap)
    values = [per_class_ap.get(i, per_class_ap.get(str(i))) for i in ids]
    heights = [0.0 if v is None else float(v) for v in values]
    labels = [CLASS_NAMES[i] if 0 <= i < len(CLASS_NAMES) else str(i) for i in ids]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(ids)), heights, color="#4878d0")
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("AP@0.5")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def _map_series(rows, split_priority=("val_teacher", "val_student")):
    for split in split_priority:
        pts = [(r.epoch, r.map50) for r in rows if r.split == split]
        if pts:
            return zip(*sorted(pts))
    return (), ()


def plot_map_vs_epoch(series: Dict[str, list], path, title: str = "mAP@0.5 by epoch") -> Path:
    """One line per run; teacher-side validation rows when present."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, rows in series.items():
        epochs, maps = _map_series(rows)
        if epochs:
            ax.plot(epochs, maps, marker="o", markersize=3, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mAP@0.5")
    ax.set_title(title)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_pr_curves(curves: Dict[str, Tuple[Sequence[float], Sequence[float]]], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, (recalls, precisions) in curves.items():
        ax.plot(recalls, precisions, label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title("precision-recall, all classes pooled")
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def acceptance_rates(audit_rows: Sequence[dict], config: FilterConfig) -> List[float]:
    """Acceptance fraction of a frozen scored pool at each schedule step.

    The threshold only decays with t, so on a fixed pool the rate is
    non-decreasing; a dip means the pool or the schedule changed mid-run.
    """
    rates = []
    for t in range(config.total_steps + 1):
        kept = [
            keep_sample(r["similarity"], r["confidence"], t, config) for r in audit_rows
        ]
        rates.append(sum(kept) / len(kept) if kept else 0.0)
    return rates


def plot_acceptance_rate(rates_by_name: Dict[str, Sequence[float]], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, rates in rates_by_name.items():
        ax.plot(range(len(rates)), rates, label=name)
    ax.set_xlabel("schedule step t")
    ax.set_ylabel("pseudo-label acceptance rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("gate acceptance on the frozen unlabeled pool")
    if rates_by_name:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


@dataclass
class RunReport:
    """What the index page knows about one run directory."""

    name: str
    run_dir: Path
    manifest: Optional[object] = None
    rows: list = field(default_factory=list)
    missing: List[str] = field(default_factory=list)
    images: List[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing


def _collect(run_dir: Path) -> RunReport:
    report = RunReport(name=run_dir.name, run_dir=run_dir)
    manifest_path = run_dir / "manifest.json"
    metrics_path = run_dir / "metrics.csv"
    if manifest_path.exists():
        report.manifest = read_manifest(manifest_path)
    else:
        report.missing.append("manifest.json")
    if metrics_path.exists():
        report.rows = read_metrics_csv(metrics_path)
    else:
        report.missing.append("metrics.csv")
    return report


def _final_map(report: RunReport) -> str:
    if report.manifest is None:
        return ""
    metrics = report.manifest.final_metrics
    block = metrics.get("test") or metrics.get("val") or {}
    value = block.get("map50")
    return f"{value:.4f}" if value is not None else ""


def generate_report(run_dirs: Sequence, out_dir) -> Path:
    """Plots plus index.html; returns the index path.

    Incomplete runs (missing manifest or metrics) appear in their own
    section with the missing files named, and the report still builds.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = [_collect(Path(d)) for d in run_dirs]
    complete = [r for r in reports if r.complete]

    series = {r.name: r.rows for r in complete}
    if series:
        plot_map_vs_epoch(series, out_dir / "map_vs_epoch.png")

    pr_curves = {}
    for r in complete:
        pr_path = r.run_dir / "pr_curve.csv"
        if pr_path.exists():
            pr_curves[r.name] = read_pr_csv(pr_path)
    if pr_curves:
        plot_pr_curves(pr_curves, out_dir / "pr_curves.png")

    rates_by_name = {}
    for r in complete:
        audit_path = r.run_dir / "filter_audit.csv"
        config_path = r.run_dir / "config.yaml"
        if audit_path.exists() and config_path.exists():
            fc = resolve_filter_config(load_config(config_path))
            rates_by_name[r.name] = acceptance_rates(read_audit_csv(audit_path), fc)
    if rates_by_name:
        plot_acceptance_rate(rates_by_name, out_dir / "acceptance_rate.png")

    for r in complete:
        metrics = r.manifest.final_metrics
        block = metrics.get("test") or metrics.get("val") or {}
        per_class = block.get("per_class_ap")
        if per_class:
            name = f"{r.name}_per_class_ap.png"
            plot_per_class_ap(per_class, out_dir / name, title=f"{r.name}: AP by class")
            r.images.append(name)

    lines = [
        "<!DOCTYPE html>",
        "<html><head><meta charset='utf-8'><title>defect-detection report</title>",
        "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}",
        "td,th{border:1px solid #999;padding:4px 10px}img{max-width:640px;display:block;margin:1em 0}</style>",
        "</head><body>",
        "<h1>Defect-detection report</h1>",
        "<h2>Runs</h2>",
        "<table><tr><th>run</th><th>seed</th><th>config hash</th><th>final mAP@0.5</th></tr>",
    ]
    for r in complete:
        m = r.manifest
        lines.append(
            f"<tr><td>{html.escape(r.name)}</td><td>{m.seed}</td>"
            f"<td><code>{html.escape(m.config_hash[:12])}</code></td>"
            f"<td>{_final_map(r)}</td></tr>"
        )
    lines.append("</table>")
    for png in ("map_vs_epoch.png", "pr_curves.png", "acceptance_rate.png"):
        if (out_dir / png).exists():
            lines.append(f"<img src='{png}' alt='{png}'>")
    for r in complete:
        for name in r.images:
            lines.append(f"<img src='{name}' alt='{name}'>")
    incomplete = [r for r in reports if not r.complete]
    if incomplete:
        lines.append("<h2>Incomplete runs</h2><ul>")
        for r in incomplete:
            missing = ", ".join(r.missing)
            lines.append(f"<li>{html.escape(str(r.run_dir))}: missing {html.escape(missing)}</li>")
        lines.append("</ul>")
    lines.append("</body></html>")
    index = out_dir / "index.html"
    index.write_text("\n".join(lines) + "\n")
    return index
