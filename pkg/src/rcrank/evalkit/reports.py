"""Report files: JSON, CSV, aligned text and optional SVG bar charts.

Wall-clock timings vary between identical runs, so they are written to a
``.timing.json`` sidecar and kept out of the main report files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

from .metrics import MetricsReport


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_dict(report):
    d = report.to_dict()
    d.pop("timing", None)
    return d


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".timing.json")


def write_metrics(report, json_path, csv_path=None):
    """Write a MetricsReport as JSON (and CSV if asked); timing goes to a sidecar."""
    Path(json_path).write_text(_dump(report_dict(report)))
    if report.timing:
        _sidecar(json_path).write_text(_dump(report.timing))
    if csv_path is not None:
        Path(csv_path).write_text(rows_to_csv([{m: getattr(report, m) for m in MetricsReport.METRICS}
                                                | {"n_queries": report.n_queries}]))


def rows_to_csv(rows):
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def render_table(rows, columns=None):
    """Aligned plain-text table of dict rows."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    cells = [[str(_fmt(row.get(c, ""))) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    head = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    lines = [head, "  ".join("-" * w for w in widths)]
    for r in cells:
        lines.append("  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def comparison_columns():
    cols = ["variant", "n_seeds"]
    for m in MetricsReport.METRICS:
        if m != "mse_std":
            cols += [f"{m}_mean", f"{m}_std"]
    return cols


def write_comparison(table, out_dir, svg=False):
    """Write comparison.{json,csv,txt} (and one SVG per metric) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = table.summary()
    per_seed = {
        v: [{"seed": run.seed, "best_epoch": run.best_epoch, "test": report_dict(run.test),
             "val": report_dict(run.val) if run.val else None} for run in table.runs[v]]
        for v in table.variants
    }
    (out / "comparison.json").write_text(_dump({"summary": rows, "runs": per_seed, "seeds": table.seeds}))
    (out / "comparison.csv").write_text(rows_to_csv(rows))
    (out / "comparison.txt").write_text(render_table(rows, comparison_columns()))
    timing = {v: [run.test.timing for run in table.runs[v]] for v in table.variants}
    (out / "comparison.timing.json").write_text(_dump(timing))
    if svg:
        for m in MetricsReport.METRICS:
            (out / f"{m}.svg").write_text(bar_chart_svg(rows, f"{m}_mean", title=m))
    return rows


def write_sweep(results, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"lambda": lam, **{m: getattr(rep, m) for m in MetricsReport.METRICS}} for lam, rep in results]
    (out / "lambda_sweep.json").write_text(_dump(rows))
    (out / "lambda_sweep.csv").write_text(rows_to_csv(rows))
    (out / "lambda_sweep.txt").write_text(render_table(rows))
    return rows


def bar_chart_svg(rows, key, label="variant", title=None, width=480, bar_h=18):
    """Horizontal bar chart of ``row[key]`` per row; negative values are drawn from zero leftwards."""
    vals = [float(r[key]) for r in rows]
    lo, hi = min(0.0, *vals), max(0.0, *vals)
    span = (hi - lo) or 1.0
    left, plot_w = 140, width - 200
    zero_x = left + plot_w * (0.0 - lo) / span
    height = 30 + bar_h * len(rows) + 10
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">']
    if title:
        parts.append(f'<text x="{left}" y="16" font-weight="bold">{escape(title)}</text>')
    for i, (row, v) in enumerate(zip(rows, vals)):
        y = 26 + i * bar_h
        x0 = zero_x + plot_w * min(v, 0.0) / span
        w = plot_w * abs(v) / span
        parts.append(f'<text x="{left - 6}" y="{y + 12}" text-anchor="end">{escape(str(row[label]))}</text>')
        parts.append(f'<rect x="{x0:.2f}" y="{y}" width="{w:.2f}" height="{bar_h - 4}" fill="#4a78a8"/>')
        parts.append(f'<text x="{x0 + w + 4:.2f}" y="{y + 12}">{v:.4f}</text>')
    parts.append(f'<line x1="{zero_x:.2f}" y1="22" x2="{zero_x:.2f}" y2="{height - 6}" stroke="#333"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
