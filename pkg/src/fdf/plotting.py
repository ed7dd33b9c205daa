"""Text tables and SVG figures rendered from a persisted :class:`ScoreReport`.

Figures are drawn with the object-oriented matplotlib API (no pyplot state)
and saved with a fixed hash salt and no date metadata, so identical reports
give identical bytes.
"""
from __future__ import annotations

import math
import re
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure
import numpy as np

from .errors import ReportError
from .evaluation import ALL, ScoreReport

SVG_RC = {
    "svg.hashsalt": "fdf",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
SAVE_KW = {"format": "svg", "metadata": {"Date": None, "Creator": None}}
GREY = "0.9"


def _fmt(v):
    return "-" if v is None else f"{v:.6g}"


def model_order(report: ScoreReport, horizon: int | None = None) -> list[str]:
    """Models sorted by test score at ``horizon`` (default: first horizon); absent ones last."""
    h = report.horizons[0] if horizon is None else horizon

    def key(m):
        c = report.get(m, h, "test")
        return (0, c.score, m) if c is not None else (1, 0.0, m)

    return sorted(report.models, key=key)


def render_table(report: ScoreReport) -> str:
    """Models x (train, test) per horizon; ``-`` marks a model not run at that horizon."""
    if not report.cells:
        raise ReportError("report has no score cells")
    horizons = report.horizons
    header = ["Model"] + [f"{h}m {part}" for h in horizons for part in ("train", "test")]
    rows = []
    for m in model_order(report):
        row = [m]
        for h in horizons:
            for part in ("train", "test"):
                c = report.get(m, h, part)
                row.append(_fmt(None if c is None else c.score))
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
        for r in [header] + rows
    ]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "region"


def _series_values(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _year_ticks(ax, periods):
    ticks = [i for i, p in enumerate(periods) if p.endswith("-01")]
    ax.set_xticks(ticks)
    ax.set_xticklabels([periods[i][:4] for i in ticks])


def plot_region(report: ScoreReport, region: str, path, horizon: int | None = None, top: int = 5):
    h = report.horizons[0] if horizon is None else horizon
    try:
        series = report.series[str(h)]
        periods = series["periods"]
        actual = _series_values(series["actual"][region])
    except KeyError as exc:
        raise ReportError(f"report lacks series data for {exc}") from None
    train_end = report.metadata.get("train_end")
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(7, 3))
        ax = fig.add_subplot()
        x = np.arange(len(periods))
        if train_end in periods:
            ax.axvspan(periods.index(train_end) + 0.5, len(periods) - 0.5, color=GREY, lw=0)
        ax.plot(x, actual, color="black", lw=1.4, label="actual")
        for m in model_order(report, h)[:top]:
            pred = series["predictions"].get(m, {}).get(region)
            if pred is not None:
                ax.plot(x, _series_values(pred), lw=0.9, label=m)
        _year_ticks(ax, periods)
        ax.set_xlim(-0.5, len(periods) - 0.5)
        ax.set_title(f"{region}: {h}-month horizon")
        ax.set_ylabel("arrivals")
        ax.legend(fontsize=7, frameon=False, ncol=2)
        fig.tight_layout()
        fig.savefig(path, **SAVE_KW)


def plot_rank_heatmap(report: ScoreReport, path, horizon: int | None = None, partition: str = "test"):
    h = report.horizons[0] if horizon is None else horizon
    models = model_order(report, h)
    regions = report.regions
    ranks = np.full((len(regions), len(models)), np.nan)
    for c in report.cells:
        if c.horizon == h and c.partition == partition and c.region != ALL and c.rank is not None:
            ranks[regions.index(c.region), models.index(c.model)] = c.rank
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(1.2 + 0.55 * len(models), 1.0 + 0.32 * len(regions)))
        ax = fig.add_subplot()
        im = ax.imshow(np.ma.masked_invalid(ranks), cmap="viridis_r", aspect="auto")
        ax.set_xticks(range(len(models)))
        ax.set_xticklabels(models, rotation=60, ha="right")
        ax.set_yticks(range(len(regions)))
        ax.set_yticklabels(regions)
        for (i, j), v in np.ndenumerate(ranks):
            if not math.isnan(v):
                ax.text(j, i, f"{v:g}", ha="center", va="center", fontsize=6, color="white")
        fig.colorbar(im, ax=ax, label=f"rank ({report.metric.kind}, {partition})")
        ax.set_title(f"Model rank by region, {h}-month horizon")
        fig.tight_layout()
        fig.savefig(path, **SAVE_KW)


def render_svgs(report: ScoreReport, out_dir) -> list[Path]:
    """One prediction chart per region plus one rank heatmap."""
    if not report.cells or not report.series:
        raise ReportError("report has no cells or series to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for region in report.regions:
        path = out_dir / f"predictions_{_slug(region)}.svg"
        plot_region(report, region, path)
        written.append(path)
    path = out_dir / "rank_heatmap.svg"
    plot_rank_heatmap(report, path)
    written.append(path)
    return written
