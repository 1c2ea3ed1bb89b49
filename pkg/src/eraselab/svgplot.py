"""Minimal deterministic SVG scatter plots; no plotting dependency.

One marker per sample, optional 2-sigma circles for the reference mixture
components. Output is a pure function of the inputs: fixed float formatting,
no timestamps, so identical calls give identical bytes.
"""

from __future__ import annotations

import numpy as np

from .validation import as_float_array

PALETTE = ("#4269d0", "#efb118", "#ff725c", "#6cc5b0",
           "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5")
UNLABELED = "#9499a0"


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def render_scatter(samples, mix=None, labels=None, title: str = "",
                   width: int = 480, height: int = 480) -> str:
    """SVG document with one circle marker per sample row."""
    pts = np.atleast_2d(as_float_array(samples, "samples"))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"samples must be (n, 2), got {pts.shape}")
    if labels is not None:
        labels = np.asarray(labels, dtype=int)
        if labels.shape != (pts.shape[0],):
            raise ValueError("labels must be one id per sample")

    corners = [pts] if pts.size else []
    rings = []  # (cx, cy, radius, color)
    if mix is not None:
        for ci, concept in enumerate(mix.concepts):
            color = PALETTE[ci % len(PALETTE)]
            for comp in concept.components:
                r = 2.0 * float(np.sqrt(comp.var))
                cx, cy = float(comp.mean[0]), float(comp.mean[1])
                rings.append((cx, cy, r, color))
                corners.append(np.array([[cx - r, cy - r], [cx + r, cy + r]]))
    bounds = np.concatenate(corners) if corners else np.array([[0.0, 0.0]])
    lo = bounds.min(axis=0)
    hi = bounds.max(axis=0)
    span = float(max((hi - lo).max(), 1e-9))
    # equal-aspect map into the canvas with a fixed margin
    margin = 24.0
    scale = (min(width, height) - 2 * margin) / span
    mid = (lo + hi) / 2.0

    def to_px(x, y):
        return (width / 2 + (x - mid[0]) * scale,
                height / 2 - (y - mid[1]) * scale)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.0f}" y="16" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{title}</text>'
        )
    for cx, cy, r, color in rings:
        px, py = to_px(cx, cy)
        out.append(
            f'<circle class="contour" cx="{_fmt(px)}" cy="{_fmt(py)}" '
            f'r="{_fmt(r * scale)}" fill="none" stroke="{color}" '
            f'stroke-width="1.5" stroke-opacity="0.8"/>'
        )
    for i in range(pts.shape[0]):
        color = UNLABELED if labels is None else PALETTE[(labels[i] - 1) % len(PALETTE)]
        px, py = to_px(pts[i, 0], pts[i, 1])
        out.append(
            f'<circle class="sample" cx="{_fmt(px)}" cy="{_fmt(py)}" r="2" '
            f'fill="{color}" fill-opacity="0.6"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_scatter(path, samples, mix=None, labels=None, title: str = "",
                 width: int = 480, height: int = 480):
    svg = render_scatter(samples, mix=mix, labels=labels, title=title,
                         width=width, height=height)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
