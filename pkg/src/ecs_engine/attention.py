"""Attention statistics over the filler region, and SVG heatmaps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping
from xml.sax.saxutils import escape as xml_escape

import numpy as np

from .datasets import LABELS
from .errors import EmptyRegion, IoError
from .prompt import PromptTokens
from .tokenizer import Vocabulary

POOLED_HEAD = -1


@dataclass
class RegionStats:
    layer: int
    head: int  # POOLED_HEAD for the per-layer max over heads
    ecs_row_mean: float
    other_row_mean: float
    mass_question: float
    mass_options: dict[str, float] = field(default_factory=dict)
    mass_first_filler: float = 0.0
    mass_eot: float = 0.0
    uniformity: float = 0.0


def unmasked_row_means(attn: np.ndarray, rows: Iterable[int]) -> tuple[float, int]:
    """Mean over the unmasked cells (j <= i) of the given rows, and the cell count."""
    rows = list(rows)
    if not rows:
        return math.nan, 0
    total = sum(float(attn[i, : i + 1].sum()) for i in rows)
    cells = sum(i + 1 for i in rows)
    return total / cells, cells


def span_masses(attn: np.ndarray, rows: Iterable[int], columns: Iterable[int]) -> np.ndarray:
    """Per-row attention mass landing on ``columns``."""
    cols = np.fromiter(columns, dtype=np.int64)
    rows = np.fromiter(rows, dtype=np.int64)
    if cols.size == 0:
        return np.zeros(rows.size)
    return attn[np.ix_(rows, cols)].sum(axis=1)


def covering_spans(prompt: PromptTokens) -> dict[str, list[int]]:
    """Disjoint {question, options, fillers, rest} column sets covering every position."""
    n = len(prompt.tokens)
    question = list(prompt.spans.get("question", ()))
    options = sorted(i for span in prompt.option_spans().values() for i in span)
    fillers = list(prompt.ecs_range)
    taken = set(question) | set(options) | set(fillers)
    rest = [i for i in range(n) if i not in taken]
    return {"question": question, "options": options, "fillers": fillers, "rest": rest}


def _stats_for_map(
    attn: np.ndarray, prompt: PromptTokens, layer: int, head: int, eot_id: int | None
) -> RegionStats:
    ecs = prompt.ecs_range
    n = attn.shape[0]
    ecs_rows = list(ecs)
    other_rows = [i for i in range(n) if i not in ecs]
    ecs_mean, _ = unmasked_row_means(attn, ecs_rows)
    other_mean, _ = unmasked_row_means(attn, other_rows)

    def mass(columns: Iterable[int]) -> float:
        return float(span_masses(attn, ecs_rows, columns).mean())

    option_mass = {label: mass(span) for label, span in prompt.option_spans().items()}
    eot_cols = [j for j, t in enumerate(prompt.tokens) if eot_id is not None and t == eot_id]

    spreads = []
    for i in ecs_rows:
        original = [j for j in range(i) if j not in ecs]
        if original:
            row = attn[i, original]
            spreads.append(float(row.max() - row.min()))
    return RegionStats(
        layer=layer,
        head=head,
        ecs_row_mean=ecs_mean,
        other_row_mean=other_mean,
        mass_question=mass(prompt.spans.get("question", ())),
        mass_options=option_mass,
        mass_first_filler=mass([ecs.start]),
        mass_eot=mass(eot_cols),
        uniformity=float(np.mean(spreads)) if spreads else 0.0,
    )


def region_stats(
    attentions: np.ndarray,
    prompt: PromptTokens,
    eot_id: int | None = None,
    pooled: bool = True,
) -> list[RegionStats]:
    """Statistics per (layer, head) for a pass over ``prompt``.

    ``attentions`` is ``(L, H, T, T)``. Masses are row sums over a column span,
    averaged over the filler rows. With ``pooled`` an extra entry per layer
    (head ``POOLED_HEAD``) is computed on the element-wise max over heads.
    """
    if len(prompt.ecs_range) == 0:
        raise EmptyRegion("prompt has no filler positions")
    attentions = np.asarray(attentions)
    if attentions.ndim != 4 or attentions.shape[2:] != (len(prompt.tokens),) * 2:
        raise ValueError(
            f"attentions shape {attentions.shape} does not match prompt length {len(prompt.tokens)}"
        )
    out = []
    for layer in range(attentions.shape[0]):
        for head in range(attentions.shape[1]):
            out.append(_stats_for_map(attentions[layer, head], prompt, layer, head, eot_id))
        if pooled:
            out.append(_stats_for_map(attentions[layer].max(axis=0), prompt, layer, POOLED_HEAD, eot_id))
    return out


STATS_COLUMNS = (
    ["layer", "head", "ecs_row_mean", "other_row_mean", "mass_question"]
    + [f"mass_option_{label}" for label in LABELS]
    + ["mass_first_filler", "mass_eot", "uniformity"]
)


def write_stats_csv(stats: Iterable[RegionStats], path: str | Path) -> None:
    def fmt(x: float) -> str:
        return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.9f}"

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATS_COLUMNS)
        for s in stats:
            writer.writerow(
                [s.layer, "max" if s.head == POOLED_HEAD else s.head,
                 fmt(s.ecs_row_mean), fmt(s.other_row_mean), fmt(s.mass_question)]
                + [fmt(s.mass_options[label]) if label in s.mass_options else "" for label in LABELS]
                + [fmt(s.mass_first_filler), fmt(s.mass_eot), fmt(s.uniformity)]
            )


# --- rendering ------------------------------------------------------------

CELL = 10
MARGIN = 40
MASKED_FILL = "#c8c8c8"
ECS_STROKE = "#f2c200"
SPAN_STROKE = "#1f3b73"
LOG_FLOOR = 1e-4
# light-to-dark sequential ramp; never passes through the masked grey
_RAMP = ((255, 247, 236), (253, 187, 132), (239, 101, 72), (179, 0, 0), (102, 0, 0))


def _color(value: float) -> str:
    v = max(float(value), LOG_FLOOR)
    t = min(1.0, (math.log10(v) - math.log10(LOG_FLOOR)) / -math.log10(LOG_FLOOR))
    pos = t * (len(_RAMP) - 1)
    k = min(int(pos), len(_RAMP) - 2)
    frac = pos - k
    rgb = [round(a + (b - a) * frac) for a, b in zip(_RAMP[k], _RAMP[k + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_filename(layer: int, head: int) -> str:
    return f"attn_L{layer}_H{'max' if head == POOLED_HEAD else head}.svg"


def render_heatmap(
    attn: np.ndarray,
    prompt: PromptTokens,
    layer: int,
    head: int,
    path: str | Path,
    vocab: Vocabulary | None = None,
) -> Path:
    """Write an SVG heatmap: log-scale cells, grey masked cells, span rules, filler outline."""
    attn = np.asarray(attn)
    n = len(prompt.tokens)
    if attn.ndim != 2 or attn.shape != (n, n):
        raise ValueError(f"attention map shape {attn.shape} does not match prompt length {n}")
    size = MARGIN + n * CELL + 10
    head_label = "max" if head == POOLED_HEAD else str(head)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f"<title>L{layer} H{head_label}</title>",
        f'<text x="2" y="12" font-size="10" font-family="monospace">L{layer} H{head_label}</text>',
        f'<g transform="translate({MARGIN},{MARGIN})">',
    ]
    for i in range(n):
        for j in range(n):
            x, y = j * CELL, i * CELL
            if j > i:
                parts.append(f'<rect class="masked" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{MASKED_FILL}"/>')
            else:
                parts.append(
                    f'<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                    f'fill="{_color(attn[i, j])}"><title>{i},{j}: {attn[i, j]:.6f}</title></rect>'
                )
    edge = n * CELL
    boundaries = sorted({b for span in prompt.spans.values() if len(span) for b in (span.start, span.stop)} - {0, n})
    for b in boundaries:
        p = b * CELL
        parts.append(f'<line class="span" x1="{p}" y1="0" x2="{p}" y2="{edge}" stroke="{SPAN_STROKE}" stroke-width="0.6"/>')
        parts.append(f'<line class="span" x1="0" y1="{p}" x2="{edge}" y2="{p}" stroke="{SPAN_STROKE}" stroke-width="0.6"/>')
    ecs = prompt.ecs_range
    if len(ecs):
        lo, width = ecs.start * CELL, len(ecs) * CELL
        parts.append(f'<rect class="ecs" x="0" y="{lo}" width="{edge}" height="{width}" fill="none" stroke="{ECS_STROKE}" stroke-width="2"/>')
        parts.append(f'<rect class="ecs" x="{lo}" y="0" width="{width}" height="{edge}" fill="none" stroke="{ECS_STROKE}" stroke-width="2"/>')
    if vocab is not None:
        for i, tok in enumerate(prompt.tokens):
            label = xml_escape(repr(vocab.tokens[tok])[1:-1][:6])
            parts.append(
                f'<text x="-2" y="{i * CELL + CELL - 2}" font-size="6" text-anchor="end" '
                f'font-family="monospace">{label}</text>'
            )
    parts += ["</g>", "</svg>", ""]
    path = Path(path)
    try:
        path.write_text("\n".join(parts), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write heatmap to {path}: {exc}") from exc
    return path


def render_all(
    attentions: np.ndarray, prompt: PromptTokens, out_dir: str | Path, vocab: Vocabulary | None = None,
    heads: Mapping[int, Iterable[int]] | None = None,
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for layer in range(attentions.shape[0]):
        selected = heads.get(layer, ()) if heads is not None else range(attentions.shape[1])
        for head in selected:
            paths.append(render_heatmap(attentions[layer, head], prompt, layer, head,
                                        out_dir / heatmap_filename(layer, head), vocab))
    return paths
