"""Forecast metrics, promotion percentages, stop-epoch summaries and report files."""
from __future__ import annotations

import csv
import io
import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, SocketPlugError
from .validation import check_same_shape

MTLC_RANGE = 3


@dataclass
class MetricsTable:
    mse: float
    mae: float
    mse_per_variable: np.ndarray
    mae_per_variable: np.ndarray
    mse_per_horizon: np.ndarray
    mae_per_horizon: np.ndarray
    n_samples: int

    def rows(self, **labels):
        """Flat dict rows (overall, then per variable, then per horizon)."""
        out = [dict(labels, scope="overall", index="", mse=self.mse, mae=self.mae)]
        for i, (a, b) in enumerate(zip(self.mse_per_variable, self.mae_per_variable)):
            out.append(dict(labels, scope="variable", index=i, mse=float(a), mae=float(b)))
        for i, (a, b) in enumerate(zip(self.mse_per_horizon, self.mae_per_horizon)):
            out.append(dict(labels, scope="horizon", index=i, mse=float(a), mae=float(b)))
        return out

    def to_dict(self):
        return {
            "mse": self.mse, "mae": self.mae, "n_samples": self.n_samples,
            "mse_per_variable": self.mse_per_variable.tolist(),
            "mae_per_variable": self.mae_per_variable.tolist(),
            "mse_per_horizon": self.mse_per_horizon.tolist(),
            "mae_per_horizon": self.mae_per_horizon.tolist(),
        }


def evaluate(pred, true) -> MetricsTable:
    """MSE/MAE overall and marginalised over variables and horizons (float64)."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    check_same_shape(pred, true, ("prediction", "target"))
    if pred.ndim != 3 or pred.shape[0] < 1:
        raise ConfigError(f"evaluate expects (samples >= 1, N, S) arrays, got {pred.shape}")
    err = pred - true
    sq, ab = err * err, np.abs(err)
    return MetricsTable(
        mse=float(sq.mean()), mae=float(ab.mean()),
        mse_per_variable=sq.mean(axis=(0, 2)), mae_per_variable=ab.mean(axis=(0, 2)),
        mse_per_horizon=sq.mean(axis=(0, 1)), mae_per_horizon=ab.mean(axis=(0, 1)),
        n_samples=pred.shape[0],
    )


@dataclass
class PromotionRecord:
    metric: str
    base: float
    calibrated: float
    promotion: float  # percent; negative means the calibrated model is worse

    def formatted(self):
        return f"{self.promotion:.3f}%"


def promotion_pct(base, calibrated):
    if base == 0:
        raise SocketPlugError("promotion undefined for a zero base metric")
    return (base - calibrated) / base * 100.0


def promotion(base: MetricsTable, calibrated: MetricsTable):
    return [PromotionRecord(m, getattr(base, m), getattr(calibrated, m),
                            promotion_pct(getattr(base, m), getattr(calibrated, m)))
            for m in ("mse", "mae")]


def mtlc_report(run) -> dict:
    """Per-plug stop/best epochs and the spread of stop epochs across plugs."""
    recs = run.records
    stops = np.array([r.stop_epoch for r in recs], dtype=float)
    spread = float(stops.max() - stops.min()) if len(stops) else 0.0
    return {
        "mode": run.mode,
        "plugs": [{"plug_id": r.plug_id, "stop_epoch": r.stop_epoch, "best_epoch": r.best_epoch,
                   "best_val": r.best_val} for r in recs],
        "stop_min": int(stops.min()) if len(stops) else 0,
        "stop_max": int(stops.max()) if len(stops) else 0,
        "stop_range": int(spread),
        "stop_std": float(stops.std()) if len(stops) else 0.0,
        "mtlc_evidence": spread >= MTLC_RANGE,
    }


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

REPORT_FORMATS = ("csv", "json", "markdown", "svg-lineplot")
DEFAULT_COLUMNS = ("setting", "scope", "index", "mse", "mae")


def _columns(rows, columns):
    if columns:
        return list(columns)
    if not rows:
        return list(DEFAULT_COLUMNS)
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating, np.integer)):
        return repr(v.item())
    return str(v)


def render_csv(rows, columns=None):
    buf = io.StringIO()
    cols = _columns(rows, columns)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in cols])
    return buf.getvalue()


def render_json(rows):
    return json.dumps(_jsonable(rows), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def render_markdown(rows, columns=None, precision=6):
    cols = _columns(rows, columns)

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return f"{v:.{precision}f}"
        return str(v)

    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    lines += ["| " + " | ".join(fmt(r.get(c, "")) for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def render_svg(rows, x="index", y="mse", series="setting", title=None, width=640, height=400):
    """Static SVG line plot: one polyline per distinct ``series`` value."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(str(r.get(series, "")), []).append((float(r[x]), float(r[y])))
    pts = [p for g in groups.values() for p in g]
    margin = 60
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                     width=str(width), height=str(height))
    if title:
        ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def sx(v):
            return margin + (v - x0) / (x1 - x0) * (width - 2 * margin)

        def sy(v):
            return height - margin - (v - y0) / (y1 - y0) * (height - 2 * margin)
    axes = ET.SubElement(svg, "g", stroke="black")
    ET.SubElement(axes, "line", x1=str(margin), y1=str(height - margin), x2=str(width - margin),
                  y2=str(height - margin))
    ET.SubElement(axes, "line", x1=str(margin), y1=str(margin), x2=str(margin),
                  y2=str(height - margin))
    ET.SubElement(svg, "text", x=str(width / 2), y=str(height - 15), attrib={"text-anchor": "middle"}).text = x
    ET.SubElement(svg, "text", x="15", y=str(height / 2),
                  transform=f"rotate(-90 15 {height / 2})", attrib={"text-anchor": "middle"}).text = y
    if pts:
        for label, val in ((f"{y0:.4g}", y0), (f"{y1:.4g}", y1)):
            ET.SubElement(svg, "text", x=str(margin - 5), y=f"{sy(val):.2f}",
                          attrib={"text-anchor": "end", "font-size": "10"}).text = label
        for label, val in ((f"{x0:.4g}", x0), (f"{x1:.4g}", x1)):
            ET.SubElement(svg, "text", x=f"{sx(val):.2f}", y=str(height - margin + 15),
                          attrib={"text-anchor": "middle", "font-size": "10"}).text = label
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    for k, (label, g) in enumerate(groups.items()):
        g = sorted(g)
        color = palette[k % len(palette)]
        ET.SubElement(svg, "polyline", fill="none", stroke=color, attrib={"stroke-width": "1.5"},
                      points=" ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in g))
        ET.SubElement(svg, "text", x=str(width - margin + 5), y=str(margin + 14 * k),
                      fill=color, attrib={"font-size": "11"}).text = f"{series}={label}"
    return ET.tostring(svg, encoding="unicode") + "\n"


def emit_report(rows, fmt, path, columns=None, **plot):
    """Write ``rows`` (a list of flat dicts) as csv, json, markdown or an svg line plot."""
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"report format must be one of {REPORT_FORMATS}, got {fmt!r}")
    rows = list(rows)
    if fmt == "csv":
        text = render_csv(rows, columns)
    elif fmt == "json":
        text = render_json(rows)
    elif fmt == "markdown":
        text = render_markdown(rows, columns)
    else:
        text = render_svg(rows, **plot)
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return path


def read_csv_rows(path):
    """Parse a report CSV back into dicts, converting numeric cells."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            out.append({k: _parse(v) for k, v in r.items()})
    return out


def _parse(text):
    for conv in (int, float):
        try:
            v = conv(text)
            if conv is float and not math.isfinite(v):
                return text
            return v
        except ValueError:
            pass
    return text
