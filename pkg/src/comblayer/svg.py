"""Minimal static SVG line plots for response curves and f0 trajectories."""
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
           "#7f7f7f")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 1e-9, step))


def line_plot(series, title="", xlabel="", ylabel="", width=640, height=360, log_y=False):
    """``series`` is a list of (label, x, y). Returns the SVG document as a string."""
    left, right, top, bottom = 60, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    if log_y:
        ys = np.log10(np.maximum(ys, 1e-12))
    x0, x1 = float(np.nanmin(xs)), float(np.nanmax(xs))
    y0, y1 = float(np.nanmin(ys)), float(np.nanmax(ys))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = lambda v: left + (v - x0) / (x1 - x0) * pw
    sy = lambda v: top + ph - (v - y0) / (y1 - y0) * ph
    out = ['<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
           'font-family="sans-serif" font-size="11">' % (width, height),
           '<rect width="100%" height="100%" fill="white"/>',
           '<text x="%d" y="18" font-size="13">%s</text>' % (left, escape(title))]
    for t in _ticks(x0, x1):
        out.append('<line x1="%.1f" x2="%.1f" y1="%d" y2="%d" stroke="#ddd"/>'
                   % (sx(t), sx(t), top, top + ph))
        out.append('<text x="%.1f" y="%d" text-anchor="middle">%g</text>'
                   % (sx(t), top + ph + 15, t))
    for t in _ticks(y0, y1):
        out.append('<line x1="%d" x2="%d" y1="%.1f" y2="%.1f" stroke="#ddd"/>'
                   % (left, left + pw, sy(t), sy(t)))
        label = "%g" % (10 ** t) if log_y else "%g" % t
        out.append('<text x="%d" y="%.1f" text-anchor="end">%s</text>'
                   % (left - 5, sy(t) + 4, label))
    out.append('<rect x="%d" y="%d" width="%d" height="%d" fill="none" stroke="black"/>'
               % (left, top, pw, ph))
    for i, (label, x, y) in enumerate(series):
        y = np.asarray(y, float)
        if log_y:
            y = np.log10(np.maximum(y, 1e-12))
        pts = " ".join("%.1f,%.1f" % (sx(a), sy(b)) for a, b in zip(np.asarray(x, float), y))
        colour = PALETTE[i % len(PALETTE)]
        out.append('<polyline fill="none" stroke="%s" stroke-width="1" points="%s"/>'
                   % (colour, pts))
        if label and len(series) <= len(PALETTE):
            out.append('<text x="%d" y="%d" fill="%s">%s</text>'
                       % (left + pw - 120, top + 14 + 13 * i, colour, escape(label)))
    out.append('<text x="%.1f" y="%d" text-anchor="middle">%s</text>'
               % (left + pw / 2, height - 8, escape(xlabel)))
    out.append('<text transform="translate(14,%.1f) rotate(-90)" text-anchor="middle">%s</text>'
               % (top + ph / 2, escape(ylabel)))
    out.append("</svg>")
    return "\n".join(out) + "\n"
