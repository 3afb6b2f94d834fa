"""Comparison tables and chart data for measured models and published baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

from .evaluate import ComparisonTable, MetricReport, compare_models, fmt, render_table

CHART_METRICS = ("auc", "precision", "recall", "accuracy", "f1")
METRIC_LABELS = {"auc": "AUC", "precision": "Precision", "recall": "Recall", "accuracy": "Accuracy", "f1": "F-score"}
DISPLAY_DECIMALS = 4


@dataclass(frozen=True)
class BaselineFixture:
    name: str
    auc: Optional[float] = None
    accuracy: Optional[float] = None
    f1: Optional[float] = None
    citation: str = ""

    def __post_init__(self):
        for metric in ("auc", "accuracy", "f1"):
            v = getattr(self, metric)
            if v is not None and not 0 <= v <= 1:
                raise ValueError(f"{self.name}: {metric}={v} outside [0, 1]")

    def values(self) -> dict[str, Optional[float]]:
        return {"auc": self.auc, "precision": None, "recall": None, "accuracy": self.accuracy, "f1": self.f1}


def _data(name: str) -> dict:
    return json.loads(resources.files("mammo_bench").joinpath("data", name).read_text(encoding="utf-8"))


def load_fixtures(path: str | Path | None = None) -> list[BaselineFixture]:
    doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else _data("baselines.json")
    return [
        BaselineFixture(
            name=b["name"],
            auc=b.get("auc"),
            accuracy=b.get("accuracy"),
            f1=b.get("f1"),
            citation=b.get("citation", ""),
        )
        for b in doc["baselines"]
    ]


def reported_reports() -> dict[str, MetricReport]:
    """Full-scale published numbers for both backbones as MetricReports (display fixtures)."""
    doc = _data("reported_table.json")
    return {
        row["model"]: MetricReport(
            auc=row["auc"],
            precision=row["precision"],
            recall=row["recall"],
            accuracy=row["accuracy"],
            f1=row["f1"],
            extra={"source": "reported"},
        )
        for row in doc["rows"]
    }


def _round(v: Optional[float]) -> Optional[float]:
    return None if v is None else round(float(v), DISPLAY_DECIMALS)


@dataclass
class ComparisonRender:
    text: str
    chart_data: dict
    svg: Optional[str] = None


def render_comparison(
    reports: Mapping[str, MetricReport] | ComparisonTable | None,
    fixtures: Sequence[BaselineFixture] = (),
    svg: bool = False,
) -> ComparisonRender:
    """Measured rows (ranked by AUC) followed by baseline fixtures.

    Fixture cells without a value render blank. Chart data holds one series per
    row plus the same numbers regrouped per metric, rounded to 4 decimals.
    """
    if isinstance(reports, ComparisonTable):
        table = reports
    elif reports:
        table = compare_models(reports)
    else:
        table = ComparisonTable(rows=[])

    series = [
        {"name": name, "kind": "measured", "values": {m: _round(getattr(r, m)) for m in CHART_METRICS}}
        for name, r in table.rows
    ]
    series += [
        {"name": f.name, "kind": "fixture", "values": {m: _round(v) for m, v in f.values().items()}}
        for f in fixtures
    ]
    groups = {
        m: [{"name": s["name"], "kind": s["kind"], "value": s["values"][m]} for s in series if s["values"][m] is not None]
        for m in CHART_METRICS
    }
    chart_data = {"decimals": DISPLAY_DECIMALS, "metrics": list(CHART_METRICS), "series": series, "groups": groups}

    measured = render_table([(s["name"], s["values"]) for s in series if s["kind"] == "measured"]) if table.rows else ""
    text = measured
    if fixtures:
        fixture_rows = [(s["name"], s["values"]) for s in series if s["kind"] == "fixture"]
        text += ("\n" if measured else "") + "Published baselines\n" + render_table(fixture_rows, blank="")
    return ComparisonRender(text=text, chart_data=chart_data, svg=bar_chart_svg(chart_data) if svg else None)


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def bar_chart_svg(chart_data: dict, width: int = 720, height: int = 360) -> str:
    """Grouped bar chart: one group per metric, one bar per series. Deterministic output."""
    metrics = [m for m in chart_data["metrics"] if chart_data["groups"].get(m)]
    series = chart_data["series"]
    left, right, top, bottom = 50, 20, 20, 70
    plot_w, plot_h = width - left - right, height - top - bottom
    group_w = plot_w / max(1, len(metrics))
    bar_w = group_w * 0.8 / max(1, len(series))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in range(0, 11, 2):
        y = top + plot_h * (1 - tick / 10)
        out.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end">{tick / 10:.1f}</text>')
    for gi, m in enumerate(metrics):
        x0 = left + gi * group_w + group_w * 0.1
        for si, s in enumerate(series):
            v = s["values"][m]
            if v is None:
                continue
            h = plot_h * v
            x = x0 + si * bar_w
            out.append(
                f'<rect x="{x:.1f}" y="{top + plot_h - h:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
                f'fill="{_PALETTE[si % len(_PALETTE)]}"><title>{escape(s["name"])}: {fmt(v)}</title></rect>'
            )
        out.append(
            f'<text x="{left + (gi + 0.5) * group_w:.1f}" y="{top + plot_h + 15}" text-anchor="middle">{METRIC_LABELS[m]}</text>'
        )
    for si, s in enumerate(series):
        x = left + si * 140
        y = height - 25
        out.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{_PALETTE[si % len(_PALETTE)]}"/>')
        out.append(f'<text x="{x + 14}" y="{y}">{escape(s["name"])} ({s["kind"]})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
