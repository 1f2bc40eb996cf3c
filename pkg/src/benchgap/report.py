"""Deterministic rendering of metrics objects as Markdown and CSV tables,
plus per-series plot-data files for external figure tooling."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ReportError
from .metrics import CollapseReport, CrossMatrix, CurveSeries, OPGReport
from .records import round_half_away


@dataclass(frozen=True)
class RenderPolicy:
    decimals: int = 2
    percent_suffix: bool = False

    def __post_init__(self):
        if self.decimals < 0:
            raise ReportError("decimals must be >= 0")

    def quantity(self, value) -> str:
        text = round_half_away(value, self.decimals)
        return text + "%" if self.percent_suffix else text


DEFAULT_POLICY = RenderPolicy()

OPG_COLUMNS = ("label", "algorithm", "p_test_oracle", "p_train", "opg_percent", "classification")
COLLAPSE_COLUMNS = ("label", "p_bal", "p_cf", "drop_pp", "retention_percent", "relative_drop_percent", "collapsed")


def _table(headers: Sequence[str], rows: list[list[str]], fmt: str) -> str:
    if fmt == "markdown":
        lines = ["| " + " | ".join(headers) + " |", "| " + " | ".join("---" for _ in headers) + " |"]
        lines.extend("| " + " | ".join(row) + " |" for row in rows)
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(rows)
        return buf.getvalue()
    raise ReportError(f"unknown table format: {fmt!r}")


def _opg_rows(reports: Sequence[OPGReport], policy: RenderPolicy) -> tuple[Sequence[str], list[list[str]]]:
    rows = [
        [
            r.label,
            r.algorithm_tag,
            policy.quantity(r.p_test_oracle),
            policy.quantity(r.p_train),
            policy.quantity(r.opg * 100),
            r.classification,
        ]
        for r in reports
    ]
    return OPG_COLUMNS, rows


def _matrix_rows(matrix: CrossMatrix, policy: RenderPolicy) -> tuple[Sequence[str], list[list[str]]]:
    headers = ["trained_on", *matrix.level_order, "average"]
    rows = []
    for model in matrix.model_order:
        rows.append(
            [
                model,
                *(policy.quantity(matrix.values[(model, lv)]) for lv in matrix.level_order),
                policy.quantity(matrix.row_averages[model]),
            ]
        )
    return headers, rows


def _series_rows(series: CurveSeries, policy: RenderPolicy) -> tuple[Sequence[str], list[list[str]]]:
    headers = ["x", series.kind]
    rows = [[str(x), policy.quantity(y)] for x, y in zip(series.x, series.y)]
    return headers, rows


def _collapse_rows(reports: Sequence[CollapseReport], policy: RenderPolicy) -> tuple[Sequence[str], list[list[str]]]:
    rows = [
        [
            str(i + 1),
            policy.quantity(r.p_bal),
            policy.quantity(r.p_cf),
            policy.quantity(r.drop_pp),
            policy.quantity(r.retention * 100),
            policy.quantity(r.relative_drop * 100),
            "true" if r.collapsed else "false",
        ]
        for i, r in enumerate(reports)
    ]
    return COLLAPSE_COLUMNS, rows


def render_table(obj, fmt: str = "markdown", policy: RenderPolicy = DEFAULT_POLICY) -> str:
    """Render OPG reports, a cross matrix, collapse reports, or a curve series."""
    if isinstance(obj, OPGReport):
        obj = [obj]
    if isinstance(obj, CollapseReport):
        obj = [obj]
    if isinstance(obj, CrossMatrix):
        headers, rows = _matrix_rows(obj, policy)
    elif isinstance(obj, CurveSeries):
        headers, rows = _series_rows(obj, policy)
    elif isinstance(obj, (list, tuple)) and all(isinstance(r, OPGReport) for r in obj):
        headers, rows = _opg_rows(obj, policy)
    elif isinstance(obj, (list, tuple)) and obj and all(isinstance(r, CollapseReport) for r in obj):
        headers, rows = _collapse_rows(obj, policy)
    else:
        raise ReportError(f"cannot render object of type {type(obj).__name__}")
    return _table(headers, rows, fmt)


def _series_filename(series: CurveSeries, index: int) -> str:
    label = series.metadata.get("group") or series.metadata.get("name") or ""
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in str(label))
    return f"{index:02d}_{series.kind}{('_' + safe) if safe else ''}.csv"


def emit_plot_data(
    series_list: Iterable[CurveSeries], out_dir: str | Path, policy: RenderPolicy = DEFAULT_POLICY
) -> list[Path]:
    """One CSV per series: a metadata comment line, then x,y rows."""
    series_list = list(series_list)
    if not series_list:
        raise ReportError("no series to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, series in enumerate(series_list, start=1):
        meta = " ".join(f"{k}={series.metadata[k]}" for k in sorted(series.metadata))
        body = _table(*_series_rows(series, policy), fmt="csv")
        path = out_dir / _series_filename(series, index)
        path.write_text(f"# kind={series.kind}{(' ' + meta) if meta else ''}\n" + body, encoding="utf-8")
        written.append(path)
    return written
