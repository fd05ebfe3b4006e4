"""Tabular and figure export for aggregates.

Each aggregate writes a tab-separated table plus a rendered PNG next to
it, so a pipeline run leaves both machine-readable and eyeball-ready
artifacts behind. Analytics itself stays chart-free; this module is the
only place that touches a canvas.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analytics import HeatmapMatrix, PriceHistogram, ShareReport


def _write_tsv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def export_shares(
    shares: dict[str, ShareReport], out_dir, name: str, title: str
) -> tuple[Path, Path]:
    """Pie chart + table for a share breakdown (class split, payments)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"{name}.tsv"
    png = out / f"{name}.png"
    labels = sorted(shares)
    _write_tsv(
        tsv,
        ["label", "count", "denominator", "percent"],
        [
            [label, shares[label].numerator, shares[label].denominator,
             f"{shares[label].percent:.2f}"]
            for label in labels
        ],
    )
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.pie(
        [shares[label].numerator for label in labels],
        labels=[f"{label} ({shares[label].percent:.1f}%)" for label in labels],
        startangle=90,
    )
    ax.set_title(title)
    _save(fig, png)
    return tsv, png


def export_ranking(
    ranking: list[tuple[str, int]], out_dir, name: str, title: str
) -> tuple[Path, Path]:
    """Horizontal bars for ranked counts (top sellers, quantities)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"{name}.tsv"
    png = out / f"{name}.png"
    _write_tsv(tsv, ["label", "count"], [[label, count] for label, count in ranking])
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(ranking), 2) + 1.5))
    labels = [label for label, _ in ranking][::-1]
    counts = [count for _, count in ranking][::-1]
    ax.barh(labels, counts, color="#4f7fae")
    ax.set_title(title)
    ax.set_xlabel("posts")
    _save(fig, png)
    return tsv, png


def export_heatmap(
    matrix: HeatmapMatrix, out_dir, name: str, title: str
) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"{name}.tsv"
    png = out / f"{name}.png"
    _write_tsv(
        tsv,
        ["category"] + list(matrix.col_labels),
        [
            [row_label] + list(row)
            for row_label, row in zip(matrix.row_labels, matrix.cells)
        ],
    )
    fig, ax = plt.subplots(figsize=(1.2 * max(len(matrix.col_labels), 3) + 2, 4))
    image = ax.imshow(matrix.cells, cmap="YlOrRd", aspect="auto")
    ax.set_xticks(range(len(matrix.col_labels)), matrix.col_labels, rotation=45, ha="right")
    ax.set_yticks(range(len(matrix.row_labels)), matrix.row_labels)
    for i, row in enumerate(matrix.cells):
        for j, value in enumerate(row):
            ax.text(j, i, str(value), ha="center", va="center", fontsize=8)
    fig.colorbar(image, ax=ax, label="posts")
    ax.set_title(title)
    _save(fig, png)
    return tsv, png


def export_price_histogram(
    histogram: PriceHistogram, out_dir, name: str, title: str
) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"{name}.tsv"
    png = out / f"{name}.png"
    bucket_labels = [
        f"[{lo:g}, {hi:g})" for (lo, hi), _ in histogram.buckets()
    ]
    rows = [
        [label, count] for label, ((_, _), count) in zip(bucket_labels, histogram.buckets())
    ]
    rows.append(["unparsed", histogram.unparsed])
    rows.append(["out_of_range", histogram.out_of_range])
    _write_tsv(tsv, ["bucket_usd", "count"], rows)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(bucket_labels, [count for _, count in histogram.buckets()], color="#e4c35c")
    ax.set_title(title)
    ax.set_ylabel("listings")
    ax.tick_params(axis="x", rotation=30)
    _save(fig, png)
    return tsv, png


def export_origin_range(
    bounds: tuple[float, float], country: str, out_dir, name: str
) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / f"{name}.tsv"
    png = out / f"{name}.png"
    low, high = bounds
    _write_tsv(
        tsv,
        ["country", "min_percent", "max_percent"],
        [[country, f"{low:.2f}", f"{high:.2f}"]],
    )
    fig, ax = plt.subplots(figsize=(6, 2.5))
    ax.barh([country], [high - low], left=[low], color="#9ecb8b")
    ax.set_xlim(0, 100)
    ax.set_xlabel("possible share of listings (%)")
    ax.set_title(f"Origin attribution range: {low:.1f}% to {high:.1f}%")
    _save(fig, png)
    return tsv, png
