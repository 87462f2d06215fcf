"""Static SVG line charts from aggregate CSVs."""

from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape as xml_escape

from .errors import NoData

WIDTH, HEIGHT = 640, 400
PAD_LEFT, PAD_RIGHT, PAD_TOP, PAD_BOTTOM = 60, 170, 30, 50
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def _read(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise NoData(f"{path}: no aggregate rows")
    for row in rows:
        row["M"] = int(row["M"])
        row["accuracy"] = float(row["accuracy"])
        row["baseline"] = float(row["baseline"])
    return rows


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "x"


def line_chart(
    series: dict[str, list[tuple[float, float]]],
    path: Path,
    title: str,
    x_label: str,
    x_ticks: list[tuple[float, str]],
) -> Path:
    """One polyline per series; points are (x, accuracy %)."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    y_lo, y_hi = math.floor(min(ys) / 5) * 5, math.ceil(max(ys) / 5) * 5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 5, y_hi + 5
    plot_w = WIDTH - PAD_LEFT - PAD_RIGHT
    plot_h = HEIGHT - PAD_TOP - PAD_BOTTOM

    def sx(x: float) -> float:
        return PAD_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return PAD_TOP + (1 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'<text x="{WIDTH / 2:.1f}" y="18" font-size="13" text-anchor="middle">{xml_escape(title)}</text>',
        f'<line x1="{PAD_LEFT}" y1="{PAD_TOP + plot_h}" x2="{PAD_LEFT + plot_w}" y2="{PAD_TOP + plot_h}" stroke="black"/>',
        f'<line x1="{PAD_LEFT}" y1="{PAD_TOP}" x2="{PAD_LEFT}" y2="{PAD_TOP + plot_h}" stroke="black"/>',
        f'<text x="{PAD_LEFT + plot_w / 2:.1f}" y="{HEIGHT - 10}" font-size="11" text-anchor="middle">{xml_escape(x_label)}</text>',
        f'<text x="14" y="{PAD_TOP + plot_h / 2:.1f}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {PAD_TOP + plot_h / 2:.1f})">accuracy (%)</text>',
    ]
    for x, label in x_ticks:
        out.append(f'<text x="{sx(x):.2f}" y="{PAD_TOP + plot_h + 14}" font-size="9" text-anchor="middle">{xml_escape(label)}</text>')
    step = max(5, (y_hi - y_lo) // 5 // 5 * 5 or 5)
    y = y_lo
    while y <= y_hi:
        out.append(f'<text x="{PAD_LEFT - 6}" y="{sy(y) + 3:.2f}" font-size="9" text-anchor="end">{y}</text>')
        out.append(f'<line x1="{PAD_LEFT}" y1="{sy(y):.2f}" x2="{PAD_LEFT + plot_w}" y2="{sy(y):.2f}" stroke="#e0e0e0"/>')
        y += step
    for k, (name, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline class="series" data-series="{xml_escape(name)}" fill="none" stroke="{color}" stroke-width="1.8" points="{coords}"/>')
        for x, y in pts:
            out.append(f'<circle class="point" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{color}"/>')
        ly = PAD_TOP + 14 * k + 6
        out.append(f'<line x1="{WIDTH - PAD_RIGHT + 12}" y1="{ly}" x2="{WIDTH - PAD_RIGHT + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - PAD_RIGHT + 34}" y="{ly + 3}" font-size="10">{xml_escape(name)}</text>')
    out += ["</svg>", ""]
    path.write_text("\n".join(out), encoding="utf-8")
    return path


def _count_axis(m: int) -> float:
    return math.log2(m + 1)


def emit_plots(csv_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Accuracy-vs-M per position (one line per filler kind); accuracy-vs-checkpoint when present."""
    rows = _read(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    has_ckpt = "checkpoint" in rows[0]
    checkpoints = list(dict.fromkeys(r.get("checkpoint", "") for r in rows))
    written = []

    for c_index, ckpt in enumerate(checkpoints):
        by_position: dict[str, dict[str, list[tuple[float, float]]]] = defaultdict(dict)
        for row in rows:
            if row.get("checkpoint", "") != ckpt:
                continue
            by_position[row["position"]].setdefault(row["kind"], []).append((row["M"], row["accuracy"]))
        for position, series in sorted(by_position.items()):
            series = {k: sorted(v) for k, v in sorted(series.items())}
            counts = sorted({m for pts in series.values() for m, _ in pts})
            suffix = f"_ckpt{c_index}" if has_ckpt else ""
            written.append(line_chart(
                {k: [(_count_axis(m), acc) for m, acc in pts] for k, pts in series.items()},
                out_dir / f"accuracy_vs_M_{_slug(position)}{suffix}.svg",
                f"accuracy vs filler count ({position}){' @ ' + ckpt if ckpt else ''}",
                "filler tokens M",
                [(_count_axis(m), str(m)) for m in counts],
            ))

    if has_ckpt and len(checkpoints) > 1:
        series: dict[str, list[tuple[float, float]]] = {}
        baseline: dict[int, float] = {}
        for row in rows:
            x = checkpoints.index(row["checkpoint"])
            if row["M"] == 0:
                baseline.setdefault(x, row["accuracy"])
            else:
                name = f"{row['kind']}:{row['M']}:{row['position']}"
                series.setdefault(name, []).append((x, row["accuracy"]))
        curves = {"baseline (M=0)": sorted(baseline.items())}
        curves.update({k: sorted(v) for k, v in sorted(series.items())})
        written.append(line_chart(
            curves,
            out_dir / "accuracy_vs_checkpoint.svg",
            "accuracy across checkpoints",
            "checkpoint",
            [(i, Path(c).stem or str(i)) for i, c in enumerate(checkpoints)],
        ))
    return written
