"""JSON audit summaries and SVG figures (radar plots, joint-grid heatmaps).

SVG output is plain SVG 1.1 text with fixed number formatting so figures are
diff-able. Structural elements carry classes tests can count:
``polygon.series`` / ``rect.bar`` (radar), ``rect.cell`` / ``text.annotation``
(heatmap), ``text.axis-label``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Any, Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from . import __version__
from .errors import EmptyAxes, EmptyGrid

SCHEMA_VERSION = "1.0"
DEFAULT_COLORS = ("#2e7d32", "#c62828", "#1565c0", "#ef6c00", "#6a1b9a", "#00838f")

# heatmap ramp: fixed hue/saturation, lightness falls linearly with MRE
HEAT_HUE, HEAT_SAT = 210, 65
HEAT_LIGHT_MAX, HEAT_LIGHT_MIN = 95.0, 30.0
MISSING_FILL = "#e0e0e0"


def _num(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _attrs(**kw) -> str:
    return "".join(f" {k.rstrip('_').replace('_', '-')}={quoteattr(str(v))}" for k, v in kw.items())


def _svg_open(width: int, height: int, **extra) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1"{_attrs(width=width, height=height, viewBox=f"0 0 {width} {height}", **extra)}>',
        '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>',
    ]


def figure_filename(audit_id: str, figure: str, factors: Sequence[str] | str) -> str:
    """``<audit-id>_<figure>_<factor(s)>.svg`` with unsafe characters replaced."""
    if isinstance(factors, str):
        factors = [factors]
    raw = f"{audit_id}_{figure}_{'-'.join(factors) or 'all'}"
    return re.sub(r"[^A-Za-z0-9_.\-]", "-", raw) + ".svg"


# ---------------------------------------------------------------------------
# Radar
# ---------------------------------------------------------------------------

@dataclass
class RadarStyle:
    colors: Mapping[str, str] | None = None  # per series; default green, red, ...
    size: int = 520
    rings: int = 4
    log_scale: bool = False
    title: str = ""
    unit: str = "pp"

    def color(self, series: str, i: int) -> str:
        if self.colors and series in self.colors:
            return self.colors[series]
        return DEFAULT_COLORS[i % len(DEFAULT_COLORS)]


def radar_axes(radar, models: Sequence[str] | None = None) -> list[dict]:
    """Axis dicts ``{factor, values: {model: absolute gap | None}}`` from RadarData."""
    models = list(radar.models if models is None else models)
    return [{"factor": a.factor, "values": {m: a.value(m) for m in models}} for a in radar.axes]


def _radius(v: float | None, vmax: float, r: float, log_scale: bool) -> float:
    if v is None or not math.isfinite(v) or v <= 0 or vmax <= 0:
        return 0.0
    if log_scale:
        return r * math.log1p(v) / math.log1p(vmax)
    return r * v / vmax


def render_radar(axes: Sequence[Mapping[str, Any]], models: Sequence[str] | None = None,
                 styling: RadarStyle | None = None) -> str:
    """One closed polygon per series over >= 3 axes; 1-2 axes use grouped bars
    (root attribute ``data-layout="bar"``). Missing values plot at the centre."""
    if not axes:
        raise EmptyAxes("radar needs at least one axis")
    style = styling or RadarStyle()
    if models is None:
        models = []
        for a in axes:
            models.extend(m for m in a["values"] if m not in models)
    models = list(models)
    values = [[a["values"].get(m) for m in models] for a in axes]
    finite = [v for row in values for v in row if v is not None and math.isfinite(v)]
    vmax = max(finite, default=0.0)
    if vmax <= 0:
        vmax = 1.0
    if len(axes) < 3:
        return _render_bars(axes, models, values, vmax, style)

    size = style.size
    cx = cy = size / 2
    r = size / 2 - 90
    out = _svg_open(size, size + 40, data_layout="radar", data_scale="log" if style.log_scale else "linear")
    if style.title:
        out.append(f'<text class="title" x="{_num(cx)}" y="22" text-anchor="middle" font-size="15">{escape(style.title)}</text>')
    n = len(axes)
    angles = [2 * math.pi * i / n - math.pi / 2 for i in range(n)]
    for k in range(1, style.rings + 1):
        frac = k / style.rings
        out.append(f'<circle class="ring" cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(r * frac)}" fill="none" stroke="#bdbdbd" stroke-width="0.8"/>')
        val = (math.expm1(frac * math.log1p(vmax)) if style.log_scale else frac * vmax)
        out.append(f'<text class="ring-label" x="{_num(cx + 3)}" y="{_num(cy - r * frac - 2)}" font-size="10" fill="#616161">{_num(val)} {escape(style.unit)}</text>')
    for a, t in zip(axes, angles):
        x, y = cx + r * math.cos(t), cy + r * math.sin(t)
        out.append(f'<line class="axis" x1="{_num(cx)}" y1="{_num(cy)}" x2="{_num(x)}" y2="{_num(y)}" stroke="#9e9e9e" stroke-width="0.8"/>')
        lx, ly = cx + (r + 18) * math.cos(t), cy + (r + 18) * math.sin(t)
        anchor = "middle" if abs(math.cos(t)) < 0.3 else ("start" if math.cos(t) > 0 else "end")
        out.append(f'<text class="axis-label" x="{_num(lx)}" y="{_num(ly + 4)}" text-anchor="{anchor}" font-size="12">{escape(str(a["factor"]))}</text>')
    for j, m in enumerate(models):
        pts = []
        for i, t in enumerate(angles):
            rad = _radius(values[i][j], vmax, r, style.log_scale)
            pts.append(f"{_num(cx + rad * math.cos(t))},{_num(cy + rad * math.sin(t))}")
        color = style.color(m, j)
        out.append(f'<polygon class="series"{_attrs(data_model=m)} points="{" ".join(pts)}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>')
    out.extend(_legend(models, style, 10, size + 12))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _legend(models: Sequence[str], style: RadarStyle, x: float, y: float) -> list[str]:
    out = []
    for j, m in enumerate(models):
        xx = x + 130 * j
        out.append(f'<rect class="legend-key" x="{_num(xx)}" y="{_num(y)}" width="12" height="12" fill="{style.color(m, j)}"/>')
        out.append(f'<text class="legend" x="{_num(xx + 16)}" y="{_num(y + 10)}" font-size="11">{escape(m)}</text>')
    return out


def _render_bars(axes, models, values, vmax, style: RadarStyle) -> str:
    width, height = style.size, 320
    left, bottom, top = 60, 260, 40
    plot_h = bottom - top
    out = _svg_open(width, height, data_layout="bar", data_scale="log" if style.log_scale else "linear")
    if style.title:
        out.append(f'<text class="title" x="{_num(width / 2)}" y="22" text-anchor="middle" font-size="15">{escape(style.title)}</text>')
    for k in range(style.rings + 1):
        frac = k / style.rings
        y = bottom - plot_h * frac
        val = (math.expm1(frac * math.log1p(vmax)) if style.log_scale else frac * vmax)
        out.append(f'<line class="ring" x1="{left}" y1="{_num(y)}" x2="{width - 20}" y2="{_num(y)}" stroke="#e0e0e0"/>')
        out.append(f'<text class="ring-label" x="{left - 4}" y="{_num(y + 4)}" text-anchor="end" font-size="10">{_num(val)}</text>')
    group_w = (width - left - 20) / len(axes)
    bar_w = group_w * 0.7 / max(len(models), 1)
    for i, a in enumerate(axes):
        gx = left + i * group_w + group_w * 0.15
        for j, m in enumerate(models):
            h = _radius(values[i][j], vmax, plot_h, style.log_scale)
            out.append(f'<rect class="bar"{_attrs(data_model=m)} x="{_num(gx + j * bar_w)}" y="{_num(bottom - h)}" width="{_num(bar_w)}" height="{_num(h)}" fill="{style.color(m, j)}"/>')
        out.append(f'<text class="axis-label" x="{_num(left + (i + 0.5) * group_w)}" y="{bottom + 18}" text-anchor="middle" font-size="12">{escape(str(a["factor"]))}</text>')
    out.extend(_legend(models, style, left, bottom + 34))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Heatmap
# ---------------------------------------------------------------------------

def heat_lightness(value: float, lo: float, hi: float) -> float:
    """Lightness (HSL %) for an MRE value: ``lo`` maps lightest, ``hi`` darkest."""
    t = 0.0 if hi <= lo else min(max((value - lo) / (hi - lo), 0.0), 1.0)
    return HEAT_LIGHT_MAX - t * (HEAT_LIGHT_MAX - HEAT_LIGHT_MIN)


def render_heatmap(grid, model: str | None = None, title: str = "") -> str:
    """One ``rect.cell`` per grid cell with MRE (1 dp) and n; low-support cells get
    a hatched overlay (``rect.low-support``)."""
    r, c = grid.shape
    if r * c == 0 or grid.n_total == 0:
        raise EmptyGrid("grid has no records")
    model = model or grid.models[0]
    vals = [cell.mre[model] for cell in grid.cells]
    present = [v for v in vals if v is not None]
    lo, hi = (min(present), max(present)) if present else (0.0, 0.0)

    cw, ch = 110, 70
    left, top = 130, 60
    width, height = left + c * cw + 20, top + r * ch + 70
    out = _svg_open(width, height)
    out.append('<defs><pattern id="hatch" patternUnits="userSpaceOnUse" width="8" height="8" patternTransform="rotate(45)">'
               '<line x1="0" y1="0" x2="0" y2="8" stroke="#424242" stroke-width="1.5"/></pattern></defs>')
    heading = title or f"MRE (%) by {grid.row_binning.factor} x {grid.col_binning.factor} ({model})"
    out.append(f'<text class="title" x="{_num(width / 2)}" y="22" text-anchor="middle" font-size="14">{escape(heading)}</text>')
    for i in range(r):
        for j in range(c):
            cell = grid.cell(i, j)
            x, y = left + j * cw, top + i * ch
            v = cell.mre[model]
            if v is None:
                fill, light, text_color = MISSING_FILL, None, "#212121"
            else:
                light = heat_lightness(v, lo, hi)
                fill = f"hsl({HEAT_HUE},{HEAT_SAT}%,{_num(light)}%)"
                text_color = "#ffffff" if light < 55 else "#212121"
            extra = {} if light is None else {"data_lightness": _num(light)}
            out.append(f'<rect class="cell"{_attrs(data_row=i, data_col=j, **extra)} x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="#ffffff" stroke-width="2"/>')
            if cell.low_support:
                out.append(f'<rect class="low-support" x="{x}" y="{y}" width="{cw}" height="{ch}" fill="url(#hatch)" fill-opacity="0.35"/>')
            label = "n/a" if v is None else f"{v:.1f}%"
            out.append(f'<text class="annotation" x="{x + cw / 2:.1f}" text-anchor="middle" font-size="13" fill="{text_color}">'
                       f'<tspan x="{x + cw / 2:.1f}" y="{y + 30}">{label}</tspan>'
                       f'<tspan x="{x + cw / 2:.1f}" y="{y + 48}">n={cell.n}</tspan></text>')
    for i, lab in enumerate(grid.row_binning.labels):
        out.append(f'<text class="axis-label" x="{left - 8}" y="{top + i * ch + ch / 2 + 4:.1f}" text-anchor="end" font-size="12">{escape(lab)}</text>')
    for j, lab in enumerate(grid.col_binning.labels):
        out.append(f'<text class="axis-label" x="{left + j * cw + cw / 2:.1f}" y="{top + r * ch + 18}" text-anchor="middle" font-size="12">{escape(lab)}</text>')
    out.append(f'<text class="axis-title" x="{left + c * cw / 2:.1f}" y="{top + r * ch + 40}" text-anchor="middle" font-size="13">{escape(grid.col_binning.factor)}</text>')
    out.append(f'<text class="axis-title" x="16" y="{top + r * ch / 2:.1f}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {top + r * ch / 2:.1f})">{escape(grid.row_binning.factor)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# JSON summary
# ---------------------------------------------------------------------------

def to_jsonable(obj: Any) -> Any:
    """Plain JSON types: NaN/inf become null, numpy scalars/arrays unwrap,
    objects with ``to_dict`` are expanded."""
    if hasattr(obj, "to_dict") and not isinstance(obj, type):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


@dataclass
class AuditSummary:
    tool_version: str = __version__
    config: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    slices: dict = field(default_factory=dict)
    factor_gaps: dict = field(default_factory=dict)
    joint_grids: list = field(default_factory=list)
    gradient_summaries: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    timestamps: dict | None = None
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        # canonicalise so that from_json(to_json()) == self
        for f in fields(self):
            setattr(self, f.name, json.loads(json.dumps(to_jsonable(getattr(self, f.name)), allow_nan=False)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AuditSummary":
        d = json.loads(text)
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def emit_summary(**components) -> str:
    """Serialise audit components (see AuditSummary fields) to canonical JSON."""
    return AuditSummary(**components).to_json()


def load_schema() -> dict:
    text = resources.files("biaslens").joinpath("data/audit_summary.schema.json").read_text(encoding="utf-8")
    return json.loads(text)
