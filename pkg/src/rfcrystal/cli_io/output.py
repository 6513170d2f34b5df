"""Result persistence: deterministic CSV/JSON payloads, provenance and SVG figures."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ConfigError

POSITION_COLUMNS = ("ion_index", "x_m", "y_m", "z_m", "micromotion_amp_m")


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def dumps_json(payload) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def table_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                         for v in row])
    return buf.getvalue()


def table_json(columns, rows) -> str:
    return dumps_json([dict(zip(columns, r)) for r in rows])


class ResultWriter:
    """Writes payload files into one directory and records them for provenance."""

    def __init__(self, directory: str | Path, fmt: str = "csv", config_hash: str = "", timestamp: bool = True):
        self.directory = Path(directory)
        self.fmt = fmt
        self.config_hash = config_hash
        self.timestamp = timestamp
        self.files: list[str] = []
        self.directory.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str) -> Path:
        path = self.directory / name
        path.write_text(content, encoding="utf-8")
        self.files.append(name)
        return path

    def table(self, stem: str, columns, rows) -> Path:
        rows = [tuple(r) for r in rows]
        if self.fmt == "json":
            return self.text(f"{stem}.json", table_json(columns, rows))
        return self.text(f"{stem}.csv", table_csv(columns, rows))

    def report(self, stem: str, payload: dict) -> Path:
        return self.text(f"{stem}.json", dumps_json({"config_hash": self.config_hash, **payload}))

    def provenance(self, command: str) -> Path:
        meta = {"config_hash": self.config_hash, "tool": "rfcrystal", "version": __version__,
                "command": command, "files": sorted(self.files)}
        if self.timestamp:
            meta["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        path = self.directory / "provenance.json"
        path.write_text(dumps_json(meta), encoding="utf-8")
        return path


def read_table(path: str | Path, columns) -> list[dict]:
    """CSV with a header row naming ``columns`` (extra columns rejected); values parsed as floats."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}", str(path)) from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ConfigError("empty CSV file", str(path), 1) from None
    if tuple(header) != tuple(columns):
        raise ConfigError(f"expected header {','.join(columns)}, got {','.join(header)}", str(path), 1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(columns):
            raise ConfigError(f"expected {len(columns)} columns, got {len(row)}", str(path), lineno)
        try:
            rows.append({c: float(v) for c, v in zip(columns, row)})
        except ValueError:
            raise ConfigError(f"non-numeric value in row {row}", str(path), lineno) from None
    return rows


def read_positions(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rows = read_table(path, POSITION_COLUMNS)
    pos = np.array([[r["x_m"], r["y_m"], r["z_m"]] for r in rows])
    amp = np.array([r["micromotion_amp_m"] for r in rows])
    return pos, amp


# --- SVG -------------------------------------------------------------------------------

_SVG_HEAD = '<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">\n'


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _metadata(timestamp: bool) -> str:
    if not timestamp:
        return ""
    now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return f"<metadata>generated {now}</metadata>\n"


def crystal_svg(positions, arrows=None, spacing: float = 5e-6, title: str = "",
                arrow_scale: float = 5.0, timestamp: bool = True, size: int = 480) -> str:
    """x-y scatter of ion positions; optional arrows are in-plane micromotion vectors (meters).

    Circles have a radius of a fifth of ``spacing`` so a 5 um lattice reads at a glance;
    arrows are drawn ``arrow_scale`` times longer than the physical excursion.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    extent = max(float(np.abs(pos[:, :2]).max()) if len(pos) else 0.0, spacing) * 1.25
    half = size / 2.0
    scale = half / extent
    parts = [_SVG_HEAD.format(w=size, h=size + 24), _metadata(timestamp)]
    parts.append(f'<rect x="0" y="0" width="{size}" height="{size + 24}" fill="white"/>\n')
    if title:
        parts.append(f'<text x="8" y="16" font-family="sans-serif" font-size="13">{title}</text>\n')
    parts.append(f'<g transform="translate({_fmt(half)},{_fmt(half + 24)})">\n')
    parts.append(f'<line x1="{_fmt(-half)}" y1="0" x2="{_fmt(half)}" y2="0" stroke="#ccc"/>\n')
    parts.append(f'<line x1="0" y1="{_fmt(-half)}" x2="0" y2="{_fmt(half)}" stroke="#ccc"/>\n')
    r = spacing / 5.0 * scale
    for x, y in pos[:, :2]:
        parts.append(f'<circle cx="{_fmt(x * scale)}" cy="{_fmt(-y * scale)}" r="{_fmt(r)}" fill="#4878a8"/>\n')
    if arrows is not None:
        for (x, y), (dx, dy) in zip(pos[:, :2], np.asarray(arrows, dtype=float)[:, :2]):
            x0, y0 = x * scale, -y * scale
            x1, y1 = x0 + dx * scale * arrow_scale, y0 - dy * scale * arrow_scale
            if math.hypot(x1 - x0, y1 - y0) < 0.5:
                continue
            parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" '
                         'stroke="#e57a5a" stroke-width="1.5" marker-end="url(#head)"/>\n')
    bar = spacing * scale
    parts.append(f'<line x1="{_fmt(half - bar - 12)}" y1="{_fmt(half - 12)}" x2="{_fmt(half - 12)}" '
                 f'y2="{_fmt(half - 12)}" stroke="black" stroke-width="2"/>\n')
    parts.append(f'<text x="{_fmt(half - bar - 12)}" y="{_fmt(half - 18)}" font-family="sans-serif" '
                 f'font-size="11">{spacing * 1e6:g} um</text>\n')
    parts.append("</g>\n")
    parts.insert(2, '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
                    '<path d="M0,0 L6,3 L0,6 z" fill="#e57a5a"/></marker></defs>\n')
    parts.append("</svg>\n")
    return "".join(parts)


_PHASE_COLORS = {"Linear": "#8b6bb8", "Zigzag": "#d69a2e", "ThreeD": "#666666", "Radial2D": "#5a9e5a",
                 "NotConverged": "#e57a5a"}


def phase_diagram_svg(cells, n_list, ratios, threshold, timestamp: bool = True) -> str:
    """Grid of phase labels (rows N, columns omega_z / omega_r) with the planarity threshold overlaid.

    ``cells`` maps (n, ratio) to a phase label; ``threshold`` maps n to the critical ratio.
    """
    cw, ch, left, top = 18, 22, 48, 30
    w = left + cw * len(ratios) + 130
    h = top + ch * len(n_list) + 40
    lo, hi = ratios[0], ratios[-1]
    span = (hi - lo) or 1.0
    parts = [_SVG_HEAD.format(w=w, h=h), _metadata(timestamp), f'<rect width="{w}" height="{h}" fill="white"/>\n']
    parts.append(f'<text x="{left}" y="18" font-family="sans-serif" font-size="12">phase vs omega_z/omega_r</text>\n')
    for i, n in enumerate(n_list):
        y = top + i * ch
        parts.append(f'<text x="4" y="{y + 15}" font-family="sans-serif" font-size="11">N={n}</text>\n')
        for j, r in enumerate(ratios):
            color = _PHASE_COLORS.get(cells[(n, r)], "#000")
            parts.append(f'<rect x="{left + j * cw}" y="{y}" width="{cw - 1}" height="{ch - 2}" fill="{color}"/>\n')
        t = threshold[n]
        if lo <= t <= hi:
            x = left + (t - lo) / span * cw * (len(ratios) - 1) + cw / 2
            parts.append(f'<line x1="{_fmt(x)}" y1="{y - 1}" x2="{_fmt(x)}" y2="{y + ch - 1}" '
                         'stroke="black" stroke-width="2"/>\n')
    ybase = top + ch * len(n_list) + 16
    parts.append(f'<text x="{left}" y="{ybase}" font-family="sans-serif" font-size="11">{lo:g}</text>\n')
    parts.append(f'<text x="{left + cw * (len(ratios) - 1)}" y="{ybase}" font-family="sans-serif" '
                 f'font-size="11">{hi:g}</text>\n')
    lx = left + cw * len(ratios) + 10
    for k, (label, color) in enumerate(_PHASE_COLORS.items()):
        parts.append(f'<rect x="{lx}" y="{top + 16 * k}" width="12" height="12" fill="{color}"/>'
                     f'<text x="{lx + 16}" y="{top + 16 * k + 10}" font-family="sans-serif" '
                     f'font-size="11">{label}</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)
