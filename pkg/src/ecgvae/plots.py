"""Deterministic SVG emitters for training curves and confusion heatmaps.

SVGs are built by plain string assembly with fixed float formatting, so a
given input always produces byte-identical output.
"""

from __future__ import annotations

import numpy as np

from .dataset import CLASS_NAMES

TRAIN_COLOR = "#1f77b4"
VAL_COLOR = "#d62728"

PANEL_W = 420
PANEL_H = 280
MARGIN = 50


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _polyline(xs, ys, color: str) -> str:
    points = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{points}"/>')


def _panel(x0: float, y0: float, title: str, epochs, series) -> str:
    """One axis panel; ``series`` is a list of (label, values, color)."""
    inner_x = x0 + MARGIN
    inner_y = y0 + 30
    inner_w = PANEL_W - MARGIN - 15
    inner_h = PANEL_H - 70

    all_vals = np.concatenate([np.asarray(v, dtype=np.float64) for _, v, _ in series])
    lo = float(all_vals.min())
    hi = float(all_vals.max())
    if hi - lo < 1e-12:
        lo -= 0.5
        hi += 0.5
    pad = 0.05 * (hi - lo)
    lo -= pad
    hi += pad

    e_lo, e_hi = float(epochs[0]), float(epochs[-1])
    e_span = e_hi - e_lo if e_hi > e_lo else 1.0

    def px(e):
        return inner_x + (e - e_lo) / e_span * inner_w

    def py(v):
        return inner_y + inner_h - (v - lo) / (hi - lo) * inner_h

    parts = [f'<g class="panel" id="panel-{title.replace(" ", "-")}">']
    parts.append(f'<rect x="{inner_x}" y="{inner_y}" width="{inner_w}" '
                 f'height="{inner_h}" fill="none" stroke="#888888"/>')
    parts.append(f'<text x="{x0 + PANEL_W / 2}" y="{y0 + 18}" '
                 f'text-anchor="middle" font-size="14">{title}</text>')
    # y extremes
    parts.append(f'<text x="{inner_x - 4}" y="{py(hi) + 4:.2f}" text-anchor="end" '
                 f'font-size="10">{hi:.4g}</text>')
    parts.append(f'<text x="{inner_x - 4}" y="{py(lo) + 4:.2f}" text-anchor="end" '
                 f'font-size="10">{lo:.4g}</text>')
    # x extremes
    parts.append(f'<text x="{_fmt(px(e_lo))}" y="{inner_y + inner_h + 14}" '
                 f'text-anchor="middle" font-size="10">{int(e_lo)}</text>')
    parts.append(f'<text x="{_fmt(px(e_hi))}" y="{inner_y + inner_h + 14}" '
                 f'text-anchor="middle" font-size="10">{int(e_hi)}</text>')

    legend_x = inner_x + 6
    for i, (label, values, color) in enumerate(series):
        parts.append(_polyline([px(e) for e in epochs],
                               [py(v) for v in values], color))
        ly = inner_y + 12 + 14 * i
        parts.append(f'<rect x="{legend_x}" y="{ly - 8}" width="10" height="10" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{legend_x + 14}" y="{ly}" font-size="10">{label}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def training_curves_svg(history) -> str:
    """Four panels: loss and accuracy (train vs validation), then the
    validation-only micro precision and recall curves."""
    epochs = [log.epoch for log in history]
    panels = [
        ("loss", [("train", [l.train_loss for l in history], TRAIN_COLOR),
                  ("validation", [l.val_loss for l in history], VAL_COLOR)]),
        ("binary accuracy", [("train", [l.train_acc for l in history], TRAIN_COLOR),
                             ("validation", [l.val_acc for l in history], VAL_COLOR)]),
        ("precision (validation)",
         [("validation", [l.val_precision for l in history], VAL_COLOR)]),
        ("recall (validation)",
         [("validation", [l.val_recall for l in history], VAL_COLOR)]),
    ]
    width = 2 * PANEL_W + 20
    height = 2 * PANEL_H + 20
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}" '
             f'font-family="sans-serif">']
    for i, (title, series) in enumerate(panels):
        x0 = 10 + (i % 2) * PANEL_W
        y0 = 10 + (i // 2) * PANEL_H
        parts.append(_panel(x0, y0, title, epochs, series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _heat_color(value: int, peak: int) -> str:
    """White-to-blue ramp proportional to value / peak."""
    frac = 0.0 if peak <= 0 else value / peak
    r = round(255 - 180 * frac)
    g = round(255 - 130 * frac)
    b = 255
    return f"#{r:02x}{g:02x}{b:02x}"


def confusion_heatmap_svg(title: str, tn: int, fp: int, fn: int, tp: int) -> str:
    """2x2 confusion heatmap: rows are actual (neg, pos), columns predicted."""
    cell = 120
    x0, y0 = 90, 60
    counts = [[tn, fp], [fn, tp]]
    peak = max(tn, fp, fn, tp)
    width = x0 + 2 * cell + 30
    height = y0 + 2 * cell + 50
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}" '
             f'font-family="sans-serif">']
    parts.append(f'<text x="{width / 2}" y="30" text-anchor="middle" '
                 f'font-size="16">{title}</text>')
    for row in range(2):
        for col in range(2):
            value = counts[row][col]
            cx = x0 + col * cell
            cy = y0 + row * cell
            parts.append(f'<rect x="{cx}" y="{cy}" width="{cell}" height="{cell}" '
                         f'fill="{_heat_color(value, peak)}" stroke="#444444"/>')
            parts.append(f'<text x="{cx + cell / 2}" y="{cy + cell / 2 + 5}" '
                         f'text-anchor="middle" font-size="18">{value}</text>')
    for col, label in enumerate(("predicted 0", "predicted 1")):
        parts.append(f'<text x="{x0 + col * cell + cell / 2}" '
                     f'y="{y0 + 2 * cell + 24}" text-anchor="middle" '
                     f'font-size="12">{label}</text>')
    for row, label in enumerate(("actual 0", "actual 1")):
        parts.append(f'<text x="{x0 - 10}" y="{y0 + row * cell + cell / 2 + 4}" '
                     f'text-anchor="end" font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def confusion_heatmaps(confusion_by_class: dict) -> dict:
    """One heatmap per class plus the pooled aggregate, keyed by file stem.

    ``confusion_by_class`` maps class name to a dict with tn/fp/fn/tp.
    """
    out = {}
    totals = {"tn": 0, "fp": 0, "fn": 0, "tp": 0}
    for name in CLASS_NAMES:
        c = confusion_by_class[name]
        out[f"confusion_{name}"] = confusion_heatmap_svg(
            name, c["tn"], c["fp"], c["fn"], c["tp"])
        for key in totals:
            totals[key] += int(c[key])
    out["confusion_overall"] = confusion_heatmap_svg(
        "all classes", totals["tn"], totals["fp"], totals["fn"], totals["tp"])
    return out
